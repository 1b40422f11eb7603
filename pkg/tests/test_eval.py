import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

import expected as ev
import oracles
from shdbench.data.types import ENDPOINT_TITLES
from shdbench.eval import (
    AlignmentError,
    PredictionSet,
    ProjectionConfig,
    UndefinedMetricError,
    auprc,
    auroc,
    macro_report,
    project_embeddings,
    threshold_metrics,
    threshold_sweep,
)


def test_worked_auroc_and_auprc():
    s, y, want = ev.AUROC_WORKED
    assert auroc(s, y) == want == oracles.auroc_pairs(s, y)
    s, y, want = ev.AUPRC_WORKED
    assert auprc(s, y) == want == oracles.average_precision_walk(s, y)
    assert auprc((0.2, 0.9), (0, 1)) == 1.0


def test_auroc_edge_cases():
    assert auroc([0.1, 0.2, 0.3, 0.4], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert math.isnan(auroc([0.1, 0.2], [1, 1]))
    assert math.isnan(auprc([0.1, 0.2], [0, 0]))
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [0, 2])


def test_worked_confusion_values():
    s, y, tau, f1, acc = ev.CONFUSION_WORKED
    tm = threshold_metrics(s, y, tau)
    assert (tm.tp, tm.fp, tm.fn) == (1, 1, 0)
    assert tm.f1 == f1 and tm.acc == acc
    assert oracles.confusion(s, y, tau) == (tm.tp, tm.fp, tm.fn, tm.tn)
    ok = threshold_metrics((0.6, 0.4), (1, 0), 0.5)
    assert ok.acc == 1.0 and ok.f1 == 1.0
    assert threshold_metrics((0.1, 0.2), (1, 0), 0.5).f1 == 0.0
    assert threshold_metrics((0.5,), (1,), 0.5).tp == 1  # inclusive threshold


scores_and_labels = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
    )
)


@settings(max_examples=200, deadline=None)
@given(scores_and_labels)
def test_metrics_match_brute_force(data):
    s, y = data
    assert auroc(s, y) == pytest.approx(oracles.auroc_pairs(s, y), abs=1e-12)
    assert auprc(s, y) == pytest.approx(oracles.average_precision_walk(s, y), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores_and_labels)
def test_auroc_symmetries(data):
    s, y = data
    s, y = np.asarray(s), np.asarray(y)
    assert auroc(s, 1 - y) == pytest.approx(1 - auroc(s, y), abs=1e-12)
    # exact rescaling leaves the ranking unchanged
    assert auroc(4.0 * s, y) == pytest.approx(auroc(s, y), abs=1e-12)
    assert 0.0 <= auprc(s, y) <= 1.0


def test_average_precision_null_concentrates_at_prevalence():
    rng = np.random.default_rng(0)
    y = (rng.uniform(size=10_000) < 0.2).astype(int)
    assert abs(auprc(rng.uniform(size=10_000), y) - y.mean()) <= 0.05


# -- reports ---------------------------------------------------------------------------


def test_macro_is_the_arithmetic_mean():
    y = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [0, 0]])
    p = np.array([[0.1, 0.2], [0.6, 0.7], [0.7, 0.3], [0.8, 0.9], [0.2, 0.65]])
    rep = macro_report(p, y, names=["a", "b"])
    a, b = auroc(p[:, 0], y[:, 0]), auroc(p[:, 1], y[:, 1])
    assert rep.macro["auroc"] == pytest.approx((a + b) / 2, abs=1e-15)


def test_all_negative_label_is_excluded(rng):
    y = (rng.uniform(size=(50, 6)) < 0.4).astype(int)
    y[:, 4] = 0
    p = rng.uniform(0.01, 0.99, size=(50, 6))
    rep = macro_report(p, y)
    assert [n for n, _ in rep.excluded] == [ENDPOINT_TITLES[4]]
    keep = [j for j in range(6) if j != 4]
    assert rep.macro["auroc"] == pytest.approx(np.mean([auroc(p[:, j], y[:, j]) for j in keep]))
    assert f"excluded {ENDPOINT_TITLES[4]}: no positive samples" in rep.to_text()
    with pytest.raises(UndefinedMetricError):
        macro_report(p, y, strict=True)


def test_report_files(tmp_path, rng):
    y = (rng.uniform(size=(40, 6)) < 0.4).astype(int)
    rep = macro_report(rng.uniform(0.01, 0.99, size=(40, 6)), y)
    csv_path, txt_path = rep.write(tmp_path / "report")
    assert len(csv_path.read_text().splitlines()) == 8
    assert txt_path.read_text().rstrip().endswith("threshold tau = 0.5")


def test_prediction_alignment():
    ps = PredictionSet(np.array([[0.2], [0.7]]), ["b", "a"])
    np.testing.assert_array_equal(ps.align_to(["a", "b"]).probabilities, [[0.7], [0.2]])
    with pytest.raises(AlignmentError):
        ps.align_to(["a", "c"])
    with pytest.raises(AlignmentError):
        macro_report(np.full((3, 6), 0.5), np.zeros((4, 6)))
    with pytest.raises(ValueError):
        PredictionSet(np.array([[0.0]]))


def test_sweep_consistency_and_separating_threshold():
    s = np.array([0.1, 0.2, 0.3, 0.7, 0.8, 0.9])
    y = np.array([0, 0, 0, 1, 1, 1])
    one = threshold_sweep(s[:, None], y[:, None], [0.5], names=["x"])
    tm = threshold_metrics(s, y, 0.5)
    assert one.curves.loc[0, "f1"] == tm.f1 and one.curves.loc[0, "acc"] == tm.acc
    res = threshold_sweep(s[:, None], y[:, None], np.linspace(0.05, 0.95, 19), names=["x"])
    best_tau = res.best.loc[0, "tau"]
    assert 0.3 < best_tau <= 0.7 and res.best.loc[0, "f1"] == 1.0
    with pytest.raises(ValueError):
        threshold_sweep(s[:, None], y[:, None], [])


# -- projection --------------------------------------------------------------------------


def test_projection_separates_clusters():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(60, 64))
    b = rng.normal(loc=6.0, size=(60, 64))
    coords = project_embeddings([a, b], ProjectionConfig(seed=1, max_iter=500))
    assert coords.shape == (120, 2)
    assert silhouette_score(coords, [0] * 60 + [1] * 60) > 0.5
    again = project_embeddings([a, b], ProjectionConfig(seed=1, max_iter=500))
    np.testing.assert_array_equal(coords, again)


def test_projection_edge_cases():
    coords = project_embeddings(np.ones((12, 5)))
    assert np.ptp(coords, axis=0).max() == 0
    with pytest.raises(ValueError, match="too few"):
        project_embeddings(np.zeros((9, 4)))
