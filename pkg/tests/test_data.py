import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import expected as ev
import oracles
from shdbench.data import (
    CohortManifest,
    DataFormatError,
    DegenerateStatsError,
    EchoMeasurements,
    IntegrityError,
    LabelVector,
    SyntheticConfig,
    WaveformPreprocessor,
    backsolve_all_negative_count,
    cohort_stats,
    derive_label_frame,
    derive_labels,
    downsample_all_negative,
    fit_preprocess_stats,
    generate_synthetic_cohort,
    import_release,
    load_stats,
    open_cohort,
    preprocess_waveform,
    read_manifest,
    read_waveform_store,
    save_stats,
    validate_cohort,
    write_manifest,
    write_waveform_store,
)
from shdbench.data.cohort import conditional_percent, cooccurrence_table
from shdbench.data.preprocess import remove_baseline
from shdbench.data.store import HEADER_SIZE
from shdbench.data.synthetic import draw_cohort
from shdbench.data.types import LABEL_COLUMNS, MissingMeasurementError, PreprocessStats

# -- waveform store ---------------------------------------------------------------


def test_store_file_size_is_header_plus_records(tmp_path):
    path = tmp_path / "z.ecgw"
    write_waveform_store([np.zeros((12, 2500))] * 3, path)
    assert path.stat().st_size == HEADER_SIZE + 3 * 12 * 2500 * 4


def test_store_round_trip_and_subset(tmp_path, rng):
    data = rng.normal(size=(3, 12, 2500)).astype(np.float32)
    path = tmp_path / "w.ecgw"
    checksum = write_waveform_store(list(data), path)
    np.testing.assert_array_equal(read_waveform_store(path), data)
    np.testing.assert_array_equal(read_waveform_store(path, [0])[0], data[0])
    assert read_waveform_store(path, []).shape == (0, 12, 2500)
    read_waveform_store(path, expected_checksum=checksum)
    with pytest.raises(IntegrityError):
        read_waveform_store(path, expected_checksum="0" * 64)


def test_store_rejects_bad_shapes_and_files(tmp_path):
    with pytest.raises(DataFormatError):
        write_waveform_store([np.zeros((11, 2500))], tmp_path / "a.ecgw")
    good = tmp_path / "g.ecgw"
    write_waveform_store([np.zeros((12, 2500))] * 2, good)
    truncated = tmp_path / "t.ecgw"
    truncated.write_bytes(good.read_bytes()[:-10])
    with pytest.raises(DataFormatError):
        read_waveform_store(truncated)
    bad_magic = tmp_path / "m.ecgw"
    bad_magic.write_bytes(b"XXXX" + good.read_bytes()[4:])
    with pytest.raises(DataFormatError):
        read_waveform_store(bad_magic)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_store_round_trip_property(tmp_path_factory, n, seed):
    data = np.random.default_rng(seed).normal(scale=3, size=(n, 12, 2500)).astype(np.float32)
    path = tmp_path_factory.mktemp("store") / "p.ecgw"
    write_waveform_store(data, path)
    np.testing.assert_array_equal(read_waveform_store(path), data)


# -- preprocessing ---------------------------------------------------------------


def test_constant_input_is_degenerate():
    with pytest.raises(DegenerateStatsError):
        fit_preprocess_stats(np.full((2, 12, 2500), 5.0), detrend=False)


def test_clip_bounds_follow_nearest_rank_on_grid():
    grid = np.arange(1000, dtype=np.float64)
    values = np.tile(grid, 30)[: 12 * 2500].reshape(1, 12, 2500)
    stats = fit_preprocess_stats(values, detrend=False)
    assert stats.clip_low == oracles.nearest_rank(values, 0.1)
    assert stats.clip_high == oracles.nearest_rank(values, 99.9)
    assert stats.clip_low == pytest.approx(1, abs=1) and stats.clip_high == pytest.approx(998, abs=1)


def test_clip_and_moments_match_brute_force(rng):
    w = rng.standard_t(3, size=(3, 12, 2500))
    stats = fit_preprocess_stats(w, detrend=False)
    assert stats.clip_low == oracles.nearest_rank(w, 0.1)
    assert stats.clip_high == oracles.nearest_rank(w, 99.9)
    clipped = np.clip(w, stats.clip_low, stats.clip_high)
    assert stats.mean == pytest.approx(clipped.mean(), rel=1e-9, abs=1e-12)
    assert stats.std == pytest.approx(clipped.std(), rel=1e-9)


def test_stats_depend_only_on_inputs(rng):
    a = rng.normal(size=(2, 12, 2500))
    b = rng.normal(loc=1.0, size=(2, 12, 2500))
    assert fit_preprocess_stats(a) == fit_preprocess_stats(a.copy())
    assert fit_preprocess_stats(a) != fit_preprocess_stats(b)


def test_constant_lead_maps_to_minus_mean_over_std():
    stats = PreprocessStats(clip_low=-2.0, clip_high=2.0, mean=0.1, std=0.5)
    w = np.full((12, 2500), 3.7)
    out = preprocess_waveform(w, stats)
    np.testing.assert_allclose(out[:, 200:-200], (0.0 - 0.1) / 0.5, atol=1e-12)


def test_sample_above_clip_high_maps_to_bound():
    stats = PreprocessStats(clip_low=-1.0, clip_high=1.0, mean=0.2, std=0.5)
    w = np.zeros((12, 2500))
    w[0, 1000] = 50.0
    out = preprocess_waveform(w, stats)
    assert out[0, 1000] == pytest.approx((1.0 - 0.2) / 0.5)
    assert out.shape == (12, 2500)


def test_stats_file_round_trip(tmp_path):
    stats = PreprocessStats(clip_low=-1.25, clip_high=3.5, mean=0.125, std=0.75, n_samples=10)
    save_stats(stats, tmp_path / "s.yaml")
    assert load_stats(tmp_path / "s.yaml") == stats
    text = (tmp_path / "s.yaml").read_text()
    assert "clip_low" in text and "median_windows_samples" in text


def test_preprocessor_estimator_api(rng):
    X = rng.normal(size=(3, 12, 2500)).astype(np.float32)
    pre = WaveformPreprocessor().fit(X)
    assert pre.get_params() == {"windows": (51, 151), "percentiles": (0.1, 99.9)}
    out = pre.transform(X)
    st_ = pre.stats_
    lo, hi = (st_.clip_low - st_.mean) / st_.std, (st_.clip_high - st_.mean) / st_.std
    assert out.min() >= lo - 1e-5 and out.max() <= hi + 1e-5


def test_no_leakage_from_validation_records(small_synthetic):
    """Stats fitted on the train block ignore whatever val/test contain."""
    m = small_synthetic.manifest
    train = np.flatnonzero(m.frame["split"].to_numpy() == "train")[:20]
    X = np.asarray(small_synthetic.store[train], dtype=np.float64)
    s1 = fit_preprocess_stats(X)
    s2 = fit_preprocess_stats(X.copy())
    assert s1 == s2


def test_synthetic_store_respects_clip_bounds(small_synthetic):
    st_ = small_synthetic.stats
    lo, hi = (st_.clip_low - st_.mean) / st_.std, (st_.clip_high - st_.mean) / st_.std
    store = np.asarray(small_synthetic.store)
    assert store.min() >= lo - 1e-5 and store.max() <= hi + 1e-5


def test_baseline_removal_of_constant_is_zero():
    np.testing.assert_allclose(remove_baseline(np.full((12, 2500), -2.5)), 0.0, atol=1e-12)


# -- labels ------------------------------------------------------------------------

NORMAL = dict(lvef=60.0, ivs=0.9, lvpw=0.9, as_grade="mild", mr_grade="mild", tr_grade="mild", rv_grade="mild")


def test_lvef_boundary_is_inclusive():
    assert derive_labels(EchoMeasurements(**(NORMAL | {"lvef": 45.0}))).bits == (1, 0, 0, 0, 0, 0)


def test_wall_thickness_uses_the_larger_wall():
    assert derive_labels(EchoMeasurements(**(NORMAL | {"ivs": 1.1, "lvpw": 1.3}))).bits[1] == 1


def test_all_normal_is_all_negative():
    lv = derive_labels(EchoMeasurements(**NORMAL))
    assert lv.bits == (0,) * 6 and lv.missing == ()


@pytest.mark.parametrize("grade, bit", [("none", 0), ("mild", 0), ("moderate", 1), ("severe", 1)])
@pytest.mark.parametrize("field, j", [("as_grade", 2), ("mr_grade", 3), ("tr_grade", 4), ("rv_grade", 5)])
def test_grade_rules(field, j, grade, bit):
    assert derive_labels(EchoMeasurements(**(NORMAL | {field: grade}))).bits[j] == bit


def test_missing_measurement_flag_and_strict_mode():
    m = EchoMeasurements(**(NORMAL | {"lvef": None}))
    lv = derive_labels(m)
    assert lv.bits[0] == 0 and lv.missing == ("reduced_lvef",)
    with pytest.raises(MissingMeasurementError):
        derive_labels(m, strict=True)


def test_measurement_ranges_are_checked():
    with pytest.raises(ValueError):
        EchoMeasurements(lvef=101.0)
    with pytest.raises(ValueError):
        EchoMeasurements(ivs=-0.1)
    with pytest.raises(ValueError):
        LabelVector((0, 1, 2, 0, 0, 0))


def test_label_frame_from_raw_columns():
    frame = pd.DataFrame([NORMAL, NORMAL | {"lvef": 30.0, "tr_grade": "severe"}])
    out = derive_label_frame(frame)
    assert out[list(LABEL_COLUMNS)].to_numpy().tolist() == [[0] * 6, [1, 0, 0, 0, 1, 0]]


@settings(max_examples=200, deadline=None)
@given(lvef=st.floats(0, 100), delta=st.floats(0, 50), ivs=st.floats(0, 3), lvpw=st.floats(0, 3), bump=st.floats(0, 2))
def test_label_rules_are_monotone(lvef, delta, ivs, lvpw, bump):
    lo = derive_labels(EchoMeasurements(lvef=lvef, ivs=ivs, lvpw=lvpw)).bits
    hi_ef = derive_labels(EchoMeasurements(lvef=min(100.0, lvef + delta), ivs=ivs, lvpw=lvpw)).bits
    assert not (lo[0] == 0 and hi_ef[0] == 1)
    thick = derive_labels(EchoMeasurements(lvef=lvef, ivs=ivs + bump, lvpw=lvpw + bump)).bits
    assert not (lo[1] == 1 and thick[1] == 0)


# -- manifest validation -----------------------------------------------------------


def test_clean_cohort_validates(small_synthetic):
    assert validate_cohort(small_synthetic.manifest).passed


def test_patient_in_two_splits_is_reported(small_synthetic):
    f = small_synthetic.manifest.frame.copy()
    test_row = f.index[f["split"] == "test"][0]
    f.loc[test_row, "patient_id"] = f.loc[0, "patient_id"]
    report = validate_cohort(CohortManifest(f))
    assert not report.passed and any("several splits" in v for v in report.violations)


def test_two_test_records_for_one_patient_is_reported(small_synthetic):
    f = small_synthetic.manifest.frame.copy()
    rows = f.index[f["split"] == "test"][:2]
    f.loc[rows, "patient_id"] = "PX"
    report = validate_cohort(CohortManifest(f))
    assert any("records in test" in v for v in report.violations)


def test_manifest_round_trip_and_store_checksum(cohort_dir, tmp_path):
    cohort = open_cohort(cohort_dir, verify=True)
    assert validate_cohort(cohort.manifest, cohort_dir / "waveforms.ecgw").passed
    write_manifest(cohort.manifest, tmp_path / "m.csv")
    again = read_manifest(tmp_path / "m.csv")
    pd.testing.assert_frame_equal(again.frame, cohort.manifest.frame)
    header = (cohort_dir / "manifest.csv").read_text().splitlines()[0]
    assert header.startswith("record_id,patient_id,split,sex,ventricular_rate,atrial_rate,pr_interval,qrs_duration,qtc,age")


# -- downsampling -------------------------------------------------------------------


def _toy_manifest(labels, splits=None):
    labels = np.asarray(labels)
    n = len(labels)
    frame = pd.DataFrame(
        {
            "record_id": [f"r{i}" for i in range(n)],
            "patient_id": [f"p{i}" for i in range(n)],
            "split": splits if splits is not None else ["train"] * n,
            **{c: 0.0 for c in ("sex", "ventricular_rate", "atrial_rate", "pr_interval", "qrs_duration", "qtc", "age")},
        }
    )
    for j, c in enumerate(LABEL_COLUMNS):
        frame[c] = labels[:, j]
    return CohortManifest(frame)


def test_downsample_identity_and_errors(small_synthetic):
    m = small_synthetic.manifest
    assert downsample_all_negative(m, 1.0, 0).manifest.frame.equals(m.frame)
    for rho in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            downsample_all_negative(m, rho, 0)


def test_downsample_without_all_negative_records_is_identity():
    m = _toy_manifest(np.eye(6, dtype=int))
    assert downsample_all_negative(m, 0.3, 1).manifest.frame.equals(m.frame)


def test_full_cohort_removed_counts():
    labels = np.zeros((ev.ALL_NEGATIVE_A + 10, 6), dtype=int)
    labels[:10, 0] = 1
    m = _toy_manifest(labels)
    for rho, removed, _ in ev.DOWNSAMPLE_ROWS:
        assert downsample_all_negative(m, rho, 0).n_removed == removed


def test_backsolve_finds_a_unique_all_negative_count():
    res = backsolve_all_negative_count([(r, k, None) for r, k, _ in ev.DOWNSAMPLE_ROWS])
    assert res.candidates == [ev.ALL_NEGATIVE_A]


def test_backsolve_flags_the_train_size_discrepancy():
    rows = [(1.0, 0, ev.REPORTED_TRAIN_N_NO_DOWNSAMPLING), *ev.DOWNSAMPLE_ROWS]
    res = backsolve_all_negative_count(rows)
    assert res.unique_a == ev.ALL_NEGATIVE_A
    assert {r: res.implied_train_sizes[r] for r, *_ in ev.DOWNSAMPLE_ROWS} == {0.5: ev.TRAIN_N, 0.3: ev.TRAIN_N, 0.1: ev.TRAIN_N}
    assert len(res.discrepancies) == 1 and "rho=1.0" in res.discrepancies[0]


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 80),
    p=st.floats(0.05, 0.9),
    rho=st.sampled_from([0.1, 0.3, 0.5, 0.77, 1.0]),
    seed=st.integers(0, 1000),
)
def test_downsample_properties(n, p, rho, seed):
    rng = np.random.default_rng(seed)
    labels = (rng.uniform(size=(n, 6)) < p / 6).astype(int)
    splits = rng.choice(["train", "val", "test"], size=n, p=[0.7, 0.15, 0.15])
    m = _toy_manifest(labels, splits)
    res = downsample_all_negative(m, rho, seed)
    out = res.manifest.frame
    f = m.frame
    neg = (f["split"] == "train") & (f[list(LABEL_COLUMNS)].sum(axis=1) == 0)
    a = int(neg.sum())
    assert res.n_removed == oracles.round_half_up((1 - rho) * a)
    assert len(out) == n - res.n_removed
    # positives and val/test rows kept exactly, in order
    keep_always = f[~neg]
    pd.testing.assert_frame_equal(out[out["record_id"].isin(keep_always["record_id"])].reset_index(drop=True), keep_always.reset_index(drop=True))
    again = downsample_all_negative(m, rho, seed).manifest.frame
    pd.testing.assert_frame_equal(out, again)


# -- cohort statistics ---------------------------------------------------------------


def test_reported_cooccurrence_cross_check():
    p = conditional_percent(ev.JOINT_LVEF_RV, ev.COUNT_LVEF)
    assert abs(p - ev.P_RV_GIVEN_LVEF_PCT) <= 0.01
    assert round(100 * ev.JOINT_LVEF_RV / ev.COHORT_N, 2) == ev.JOINT_PREV_PCT


def test_conditional_on_empty_endpoint_is_undefined():
    assert math.isnan(conditional_percent(0, 0))


def test_cohort_stats_shapes_and_sorting(small_synthetic):
    stats = cohort_stats(small_synthetic.manifest)
    assert stats.prevalence.shape == (6, 4)
    assert list(stats.prevalence.columns) == ["overall", "train", "val", "test"]
    co = stats.cooccurrence
    assert len(co) == 15
    assert (np.diff(co["count"].to_numpy()) <= 0).all()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 300), p=st.floats(0.01, 0.8))
def test_cooccurrence_self_consistency(seed, n, p):
    labels = (np.random.default_rng(seed).uniform(size=(n, 6)) < p).astype(int)
    co = cooccurrence_table(labels)
    for _, r in co.iterrows():
        if r["count_t1"]:
            assert round(r["p_t2_given_t1"] / 100 * r["count_t1"], 9) == r["count"]
        if r["count_t2"]:
            assert round(r["p_t1_given_t2"] / 100 * r["count_t2"], 9) == r["count"]
    # diagonal: P(T|T) = 100%
    counts = labels.sum(axis=0)
    for j in np.flatnonzero(counts):
        assert conditional_percent(int(counts[j]), int(counts[j])) == 100.0


# -- synthetic generator ----------------------------------------------------------------

TARGET_PREV = (0.18, 0.20, 0.05, 0.06, 0.06, 0.08)


def test_synthetic_prevalence_single_draw():
    frame = draw_cohort(SyntheticConfig(n=6000, prevalence=TARGET_PREV, seed=0)).frame
    emp = frame[list(LABEL_COLUMNS)].mean().to_numpy()
    assert np.abs(emp - TARGET_PREV).max() <= 0.02


def test_synthetic_prevalence_over_twenty_seeds():
    means = np.mean(
        [draw_cohort(SyntheticConfig(n=6000, prevalence=TARGET_PREV, seed=s)).frame[list(LABEL_COLUMNS)].mean().to_numpy() for s in range(20)],
        axis=0,
    )
    assert np.abs(means - TARGET_PREV).max() <= 0.01


def test_synthetic_is_deterministic(tmp_path):
    a = generate_synthetic_cohort(SyntheticConfig(n=60, seed=9), tmp_path / "a")
    b = generate_synthetic_cohort(SyntheticConfig(n=60, seed=9), tmp_path / "b")
    assert (tmp_path / "a" / "waveforms.ecgw").read_bytes() == (tmp_path / "b" / "waveforms.ecgw").read_bytes()
    assert a.manifest.frame.equals(b.manifest.frame)


def test_synthetic_parameter_errors():
    with pytest.raises(ValueError):
        SyntheticConfig(n=59).validate()
    with pytest.raises(ValueError):
        SyntheticConfig(prevalence=(0.0, 0.2, 0.1, 0.1, 0.1, 0.1)).validate()
    with pytest.raises(ValueError):
        SyntheticConfig(correlations={(0, 1): 0.99, (0, 2): 0.99, (1, 2): -0.99}).validate()


def test_zero_signal_waveforms_ignore_labels():
    """With no signal the per-record waveform draw does not depend on labels."""
    a = draw_cohort(SyntheticConfig(n=200, seed=4, signal_strength=0.0))
    assert np.all(a.effects == 0)


def test_labels_match_measurements(small_synthetic):
    f = small_synthetic.manifest.frame
    derived = derive_label_frame(f)
    np.testing.assert_array_equal(derived[list(LABEL_COLUMNS)].to_numpy(), f[list(LABEL_COLUMNS)].to_numpy())


# -- release import ----------------------------------------------------------------------


def _fake_release(root, n_per_split=(4, 2, 2)):
    root.mkdir()
    rows = []
    k = 0
    for split, n in zip(("train", "val", "test"), n_per_split):
        waves = (k + np.arange(n, dtype=np.float32))[:, None, None, None] * np.ones((1, 1, 2500, 12), np.float32)
        np.save(root / f"EchoNext_{split}_waves.npy", waves)
        for _ in range(n):
            rows.append(
                {
                    "ecg_key": f"e{k}",
                    "patient_key": f"p{k}",
                    "split": split,
                    "sex": "Male" if k % 2 else "Female",
                    "ventricular_rate": 70,
                    "atrial_rate": 70,
                    "pr_interval": 160,
                    "qrs_duration": 90,
                    "qt_corrected": 420,
                    "age_at_ecg": 60,
                    "lvef_lte_45_flag": k % 2,
                    "lvwt_gte_13_flag": 0,
                    "aortic_stenosis_moderate_or_greater_flag": 0,
                    "mitral_regurgitation_moderate_or_greater_flag": 1,
                    "tricuspid_regurgitation_moderate_or_greater_flag": 0,
                    "rv_systolic_dysfunction_moderate_or_greater_flag": 0,
                }
            )
            k += 1
    pd.DataFrame(rows).to_csv(root / "EchoNext_metadata.csv", index=False)
    return root


def test_release_import(tmp_path):
    root = _fake_release(tmp_path / "release")
    manifest = import_release(root, tmp_path / "out")
    assert manifest.counts == {"train": 4, "val": 2, "test": 2}
    cohort = open_cohort(tmp_path / "out", verify=True)
    assert cohort.store.shape == (8, 12, 2500)
    assert float(cohort.store[5, 0, 0]) == 5.0
    assert cohort.manifest.frame["sex"].tolist()[:2] == [0.0, 1.0]
    assert validate_cohort(cohort.manifest).passed


def test_release_import_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataFormatError):
        import_release(tmp_path / "empty", tmp_path / "o1")
    root = _fake_release(tmp_path / "r2")
    meta = pd.read_csv(root / "EchoNext_metadata.csv").drop(columns=["split"])
    meta.to_csv(root / "EchoNext_metadata.csv", index=False)
    with pytest.raises(DataFormatError):
        import_release(root, tmp_path / "o2")
