"""Desk-scale synthetic cohort with label-conditioned 12-lead morphology.

Labels come from a thresholded multivariate normal (a latent-factor model)
so marginal prevalences match their targets in expectation and pairwise
co-occurrence follows the latent correlations. Each record is a train of
Gaussian-bump P/Q/R/S/ST/T beats projected onto the 12 leads; every
positive label shifts rate, widths, lead gains or adds a component, scaled
by ``signal_strength``. At strength 0 the waveform is independent of the labels.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats as sps

from .manifest import MANIFEST_NAME, STATS_NAME, STORE_NAME, CohortManifest, write_manifest
from .preprocess import CHUNK, clip_and_normalize, fit_preprocess_stats, remove_baseline, save_stats
from .store import WaveformStoreWriter, read_waveform_store
from .types import (
    COVARIATE_NAMES,
    ENDPOINTS,
    LABEL_COLUMNS,
    N_LABELS,
    N_LEADS,
    N_SAMPLES,
    SAMPLING_RATE,
    Grade,
    PreprocessStats,
)

logger = logging.getLogger(__name__)

DEFAULT_PREVALENCE = (0.2389, 0.2422, 0.0405, 0.0845, 0.1065, 0.1324)

# latent correlations between endpoints (indices in ENDPOINTS order)
DEFAULT_CORRELATIONS = {
    (0, 5): 0.55,
    (0, 1): 0.25,
    (0, 3): 0.50,
    (1, 5): 0.20,
    (4, 5): 0.50,
    (0, 4): 0.40,
    (1, 4): 0.15,
    (3, 5): 0.35,
    (3, 4): 0.45,
    (1, 3): 0.15,
    (1, 2): 0.40,
    (0, 2): 0.10,
}

T = np.arange(N_SAMPLES) / SAMPLING_RATE

#            I     II    III   aVR   aVL   aVF   V1    V2    V3    V4    V5    V6
_GAINS = {
    "P": [0.10, 0.15, 0.05, -0.12, 0.03, 0.10, 0.06, 0.08, 0.08, 0.08, 0.08, 0.07],
    "Q": [-0.05, -0.04, 0.0, 0.0, -0.05, -0.02, 0.0, 0.0, 0.0, -0.03, -0.06, -0.06],
    "R": [0.60, 1.00, 0.40, -0.80, 0.20, 0.70, 0.20, 0.50, 0.80, 1.20, 1.30, 1.00],
    "S": [-0.10, -0.15, -0.20, 0.10, -0.10, -0.15, -0.80, -1.00, -0.60, -0.30, -0.15, -0.10],
    "ST": [0.0] * 12,
    "T": [0.25, 0.35, 0.10, -0.30, 0.10, 0.20, 0.05, 0.30, 0.40, 0.45, 0.35, 0.25],
    "P2": [0.0] * 12,
    "R2": [0.0] * 12,
}
WAVES = tuple(_GAINS)
BASE_GAINS = np.array([_GAINS[w] for w in WAVES], dtype=np.float64)  # (waves, leads)
# offset from the R peak and Gaussian width, seconds
BASE_OFFSETS = {"P": -0.16, "Q": -0.03, "R": 0.0, "S": 0.035, "ST": 0.14, "T": 0.28, "P2": -0.12, "R2": 0.055}
BASE_WIDTHS = {"P": 0.020, "Q": 0.008, "R": 0.010, "S": 0.010, "ST": 0.035, "T": 0.045, "P2": 0.020, "R2": 0.010}
QRS_WAVES = ("Q", "R", "S", "R2")

LATERAL = [0, 4, 10, 11]  # I, aVL, V5, V6
INFERIOR = [1, 2, 5]  # II, III, aVF
RIGHT_PRECORDIAL = [6, 7]
ANTERIOR = [6, 7, 8]


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic cohort.

    ``correlations`` maps endpoint index pairs to latent correlations; the
    resulting matrix must be positive definite.
    """

    n: int = 1200
    prevalence: tuple = DEFAULT_PREVALENCE
    correlations: dict = field(default_factory=lambda: dict(DEFAULT_CORRELATIONS))
    signal_strength: float = 1.0
    seed: int = 0
    split_fractions: tuple = (0.8, 0.1, 0.1)
    split_sizes: tuple | None = None
    repeat_fraction: float = 0.15
    noise_mv: float = 0.04
    include_measurements: bool = True

    def sizes(self) -> tuple[int, int, int]:
        if self.split_sizes is not None:
            sizes = tuple(int(s) for s in self.split_sizes)
            if sum(sizes) != self.n:
                raise ValueError(f"split_sizes {sizes} do not sum to n={self.n}")
            return sizes
        n_val = int(round(self.split_fractions[1] * self.n))
        n_test = int(round(self.split_fractions[2] * self.n))
        return self.n - n_val - n_test, n_val, n_test

    def validate(self):
        if self.n < 60:
            raise ValueError(f"synthetic cohort needs n >= 60, got {self.n}")
        p = np.asarray(self.prevalence, dtype=float)
        if p.shape != (N_LABELS,) or not np.all((p > 0) & (p < 1)):
            raise ValueError(f"prevalence must be {N_LABELS} values in (0, 1), got {self.prevalence}")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be non-negative")
        if min(self.sizes()) < 1:
            raise ValueError("every split needs at least one record")
        latent_correlation(self.correlations)


def latent_correlation(correlations: dict) -> np.ndarray:
    r = np.eye(N_LABELS)
    for (i, j), c in correlations.items():
        if i == j or not (0 <= i < N_LABELS and 0 <= j < N_LABELS):
            raise ValueError(f"invalid endpoint pair {(i, j)}")
        if not -1.0 < c < 1.0:
            raise ValueError(f"latent correlation for {(i, j)} must lie in (-1, 1), got {c}")
        r[i, j] = r[j, i] = c
    try:
        np.linalg.cholesky(r)
    except np.linalg.LinAlgError as err:
        raise ValueError("infeasible co-occurrence request: latent correlation matrix is not positive definite") from err
    return r


def _gauss_train(centers: np.ndarray, width: float) -> np.ndarray:
    """Sum of unit Gaussians centred at ``centers`` (seconds) over the record grid."""
    if centers.size == 0:
        return np.zeros(N_SAMPLES)
    d = T[None, :] - centers[:, None]
    return np.exp(-0.5 * (d / width) ** 2).sum(axis=0)


def template_ecg(bpm: float, *, first_peak: int | None = None, amplitude: float = 1.0, n_leads: int = 1):
    """Noise-free Gaussian-bump beat train with R peaks at known sample indices.

    Returns ``(signal, peaks)``; ``signal`` has shape (n_samples,) for one lead,
    otherwise (n_leads, n_samples) using the default lead gains.
    """
    rr = int(round(60.0 * SAMPLING_RATE / bpm))
    start = rr // 2 if first_peak is None else first_peak
    peaks = np.arange(start, N_SAMPLES, rr)
    centers = peaks / SAMPLING_RATE
    shapes = np.stack([_gauss_train(centers + BASE_OFFSETS[w], BASE_WIDTHS[w]) for w in WAVES])
    leads = amplitude * BASE_GAINS.T @ shapes
    if n_leads == 1:
        return leads[1], peaks
    return leads[:n_leads], peaks


def _record_waveform(effects: np.ndarray, rng: np.random.Generator, noise_mv: float = 0.04) -> tuple[np.ndarray, dict]:
    """Raw (mV) 12-lead record for effect magnitudes ``effects`` (0 = absent)."""
    e_lvef, e_lvwt, e_as, e_mr, e_tr, e_rv = effects
    gains = BASE_GAINS.copy()
    wi = {w: k for k, w in enumerate(WAVES)}

    hr = float(np.clip(rng.normal(68, 9), 45, 110)) + 14 * e_lvef + 6 * e_rv + 5 * e_tr
    qrs_scale = (1 + 0.5 * e_lvef) * (1 + 0.15 * e_as) * (1 + 0.25 * e_rv) * float(np.exp(rng.normal(0, 0.06)))
    pr_shift = 0.045 * e_as + float(rng.normal(0, 0.012))
    qt_shift = 0.03 * e_lvef + 0.015 * e_lvwt

    # reduced LVEF: low voltage, lateral T flattening
    gains[wi["R"]] *= 1 - 0.35 * e_lvef
    gains[wi["T"], LATERAL + [9]] *= 1 - 0.9 * e_lvef
    # increased wall thickness: lateral R and right-precordial S voltage, strain ST
    gains[wi["R"], LATERAL] *= 1 + 0.8 * e_lvwt
    gains[wi["S"], RIGHT_PRECORDIAL] *= 1 + 0.8 * e_lvwt
    gains[wi["ST"], LATERAL] += -0.12 * e_lvwt
    # aortic stenosis: milder hypertrophy pattern, lateral T inversion
    gains[wi["R"], LATERAL] *= 1 + 0.35 * e_as
    gains[wi["T"], LATERAL] -= 0.35 * e_as
    # mitral regurgitation: broad, notched P waves
    gains[wi["P"]] *= 1 + 0.4 * e_mr
    gains[wi["P2"]] += 0.9 * e_mr * BASE_GAINS[wi["P"]]
    # tricuspid regurgitation: peaked inferior P, right axis shift
    gains[wi["P"], INFERIOR] *= 1 + 0.9 * e_tr
    gains[wi["R"], 0] *= 1 - 0.45 * e_tr
    gains[wi["R"], 2] *= 1 + 0.7 * e_tr
    # RV dysfunction: dominant R' in V1-V2, anterior T inversion
    gains[wi["R2"], RIGHT_PRECORDIAL] += 0.5 * e_rv
    gains[wi["R"], RIGHT_PRECORDIAL] *= 1 + 1.2 * e_rv
    gains[wi["T"], ANTERIOR] -= 0.45 * e_rv

    gains *= 1 + 0.10 * rng.standard_normal(gains.shape)
    gains *= float(np.exp(rng.normal(0, 0.15)))

    rr = 60.0 / hr
    jitter = 0.02 + 0.10 * e_mr
    intervals = rr * (1 + jitter * rng.standard_normal(int(10.0 / rr) + 4))
    intervals = np.clip(intervals, 0.3, 2.0)
    beats = rng.uniform(0.05, 0.95) * rr + np.concatenate([[0.0], np.cumsum(intervals)])
    beats = beats[beats < 10.4]

    offsets = dict(BASE_OFFSETS)
    widths = dict(BASE_WIDTHS)
    for w in QRS_WAVES:
        offsets[w] *= qrs_scale
        widths[w] *= qrs_scale
    widths["P"] *= 1 + 0.5 * e_mr
    offsets["P"] -= pr_shift
    offsets["P2"] -= pr_shift - 0.02 * e_mr
    offsets["T"] += qt_shift
    offsets["ST"] += 0.5 * qt_shift
    shapes = np.stack([_gauss_train(beats + offsets[w], widths[w]) for w in WAVES])
    x = gains.T @ shapes

    # flutter-like 4.5-6 Hz atrial activity with tricuspid regurgitation
    if e_tr > 0:
        f = rng.uniform(4.5, 6.0)
        saw = 2 * ((T * f + rng.uniform()) % 1.0) - 1
        x[INFERIOR + [6]] += 0.06 * e_tr * saw

    wander_f = rng.uniform(0.1, 0.45, size=(N_LEADS, 1))
    wander = rng.uniform(0.05, 0.3, size=(N_LEADS, 1)) * np.sin(2 * np.pi * wander_f * T + rng.uniform(0, 2 * np.pi, (N_LEADS, 1)))
    x = x + wander + rng.normal(0, 1, size=x.shape) * noise_mv

    measured = {
        "hr": hr,
        "pr_ms": 1000 * (abs(offsets["P"]) - widths["P"]) + 40,
        "qrs_ms": 1000 * 9 * BASE_WIDTHS["R"] * qrs_scale,
        "qt_ms": 1000 * (offsets["T"] + 2 * widths["T"]) + 40,
        "noise": rng.standard_normal(5),
    }
    return x, measured


def _measurements(labels: np.ndarray, rng: np.random.Generator) -> pd.DataFrame:
    n = len(labels)
    lvef = np.where(labels[:, 0] == 1, rng.uniform(15, 45, n), rng.uniform(45.5, 72, n)).round(1)
    wall_pos = rng.uniform(1.3, 2.0, n)
    wall_neg = rng.uniform(0.6, 1.29, n)
    wall = np.where(labels[:, 1] == 1, wall_pos, wall_neg).round(2)
    other = (wall * rng.uniform(0.75, 1.0, n)).round(2)
    swap = rng.uniform(size=n) < 0.5
    ivs = np.where(swap, wall, other)
    lvpw = np.where(swap, other, wall)

    def grade(col):
        pos = rng.choice([Grade.MODERATE, Grade.SEVERE], size=n, p=[0.7, 0.3])
        neg = rng.choice([Grade.NONE, Grade.MILD], size=n, p=[0.6, 0.4])
        return [Grade(int(g)).name.lower() for g in np.where(labels[:, col] == 1, pos, neg)]

    return pd.DataFrame(
        {
            "lvef": lvef,
            "ivs": ivs,
            "lvpw": lvpw,
            "as_grade": grade(2),
            "mr_grade": grade(3),
            "tr_grade": grade(4),
            "rv_grade": grade(5),
        }
    )


@dataclass
class SyntheticDraw:
    frame: pd.DataFrame
    effects: np.ndarray
    record_seeds: list
    noise_mv: float = 0.04


def draw_cohort(config: SyntheticConfig) -> SyntheticDraw:
    """Labels, patients, splits and per-record seeds (no waveforms yet)."""
    config.validate()
    n_train, n_val, n_test = config.sizes()
    root = np.random.SeedSequence(config.seed)
    label_ss, wave_ss = root.spawn(2)
    rng = np.random.default_rng(label_ss)

    # train patients: some contribute a second ECG sharing their latent state
    n_repeat = int(round(config.repeat_fraction * n_train / (1 + config.repeat_fraction)))
    n_train_patients = n_train - n_repeat
    n_patients = n_train_patients + n_val + n_test
    corr = latent_correlation(config.correlations)
    z = rng.multivariate_normal(np.zeros(N_LABELS), corr, size=n_patients, method="cholesky")
    thresholds = sps.norm.ppf(1.0 - np.asarray(config.prevalence, dtype=float))
    patient_labels = (z > thresholds).astype(np.int64)

    repeats = rng.choice(n_train_patients, size=n_repeat, replace=False) if n_repeat else np.empty(0, dtype=int)
    train_patients = np.sort(np.concatenate([np.arange(n_train_patients), repeats]))
    patient_of = np.concatenate([train_patients, n_train_patients + np.arange(n_val + n_test)])
    split = np.array(["train"] * n_train + ["val"] * n_val + ["test"] * n_test)
    labels = patient_labels[patient_of]

    # per-record effect magnitudes, drawn regardless of labels to keep streams aligned
    magnitude = rng.uniform(0.6, 1.4, size=labels.shape)
    effects = config.signal_strength * labels * magnitude

    frame = pd.DataFrame(
        {
            "record_id": [f"R{i:06d}" for i in range(config.n)],
            "patient_id": [f"P{p:06d}" for p in patient_of],
            "split": split,
        }
    )
    for c, name in zip(range(N_LABELS), LABEL_COLUMNS):
        frame[name] = labels[:, c]
    if config.include_measurements:
        frame = pd.concat([frame, _measurements(labels, rng)], axis=1)
    frame["_sex"] = rng.integers(0, 2, size=config.n)
    frame["_age_noise"] = rng.normal(0, 12, size=config.n)
    return SyntheticDraw(frame, effects, wave_ss.spawn(config.n), config.noise_mv)


def _covariates(draw: SyntheticDraw, measured: list[dict]) -> pd.DataFrame:
    rows = []
    for k, (m, e) in enumerate(zip(measured, draw.effects)):
        noise = m["noise"]
        rate = m["hr"] + 1.0 * noise[0]
        qt = m["qt_ms"] + 8 * noise[1]
        rows.append(
            {
                "sex": float(draw.frame["_sex"].iat[k]),
                "ventricular_rate": round(rate, 1),
                "atrial_rate": round(rate + 1.5 * noise[2] + 25 * e[4], 1),
                "pr_interval": round(m["pr_ms"] + 6 * noise[3], 1),
                "qrs_duration": round(m["qrs_ms"] + 4 * noise[4], 1),
                "qtc": round(qt / np.sqrt(60.0 / m["hr"]), 1),
                "age": round(float(np.clip(62 + 4 * e.sum() + draw.frame["_age_noise"].iat[k], 18, 95)), 1),
            }
        )
    return pd.DataFrame(rows, columns=list(COVARIATE_NAMES))


def synthesize_raw(draw: SyntheticDraw, positions) -> tuple[np.ndarray, list[dict]]:
    out = np.empty((len(positions), N_LEADS, N_SAMPLES), dtype=np.float64)
    measured = []
    for k, pos in enumerate(positions):
        rng = np.random.default_rng(draw.record_seeds[pos])
        out[k], m = _record_waveform(draw.effects[pos], rng, draw.noise_mv)
        measured.append(m)
    return out, measured


@dataclass
class SyntheticCohort:
    manifest: CohortManifest
    stats: PreprocessStats
    store_path: Path | None
    store: np.ndarray


def generate_synthetic_cohort(config: SyntheticConfig, out_dir: str | os.PathLike | None = None) -> SyntheticCohort:
    """Draw, synthesise and preprocess a cohort.

    With ``out_dir`` the preprocessed store, manifest and stats file are
    written there and the store is returned as a memory map; otherwise
    everything stays in memory.
    """
    draw = draw_cohort(config)
    n = config.n
    fd, tmp = tempfile.mkstemp(suffix=".raw.ecgw")
    os.close(fd)
    measured: list[dict] = []
    try:
        detrended = np.memmap(tmp, dtype=np.float32, mode="w+", shape=(n, N_LEADS, N_SAMPLES))
        for start in range(0, n, CHUNK):
            pos = np.arange(start, min(n, start + CHUNK))
            raw, m = synthesize_raw(draw, pos)
            detrended[pos] = remove_baseline(raw)
            measured.extend(m)
        train_rows = np.flatnonzero(draw.frame["split"].to_numpy() == "train")
        n_train = len(train_rows)
        # train rows are the leading block of the store
        stats = fit_preprocess_stats(detrended[:n_train], detrend=False)

        frame = draw.frame.drop(columns=["_sex", "_age_noise"])
        frame = pd.concat([frame, _covariates(draw, measured)], axis=1)

        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            store_path = out_dir / STORE_NAME
            with WaveformStoreWriter(store_path) as writer:
                for start in range(0, n, CHUNK):
                    writer.append(clip_and_normalize(np.asarray(detrended[start : start + CHUNK], dtype=np.float64), stats))
            manifest = CohortManifest(frame, store_checksum=writer.checksum)
            write_manifest(manifest, out_dir / MANIFEST_NAME)
            save_stats(stats, out_dir / STATS_NAME)
            store = read_waveform_store(store_path)
        else:
            store_path = None
            store = np.empty((n, N_LEADS, N_SAMPLES), dtype=np.float32)
            for start in range(0, n, CHUNK):
                store[start : start + CHUNK] = clip_and_normalize(np.asarray(detrended[start : start + CHUNK], dtype=np.float64), stats)
            manifest = CohortManifest(frame)
        del detrended
    finally:
        os.unlink(tmp)
    logger.info("synthetic cohort: %s records, prevalence %s", n, np.round(manifest.labels().mean(axis=0), 3))
    return SyntheticCohort(manifest, stats, store_path, store)


__all__ = [
    "SyntheticConfig",
    "SyntheticCohort",
    "generate_synthetic_cohort",
    "draw_cohort",
    "template_ecg",
    "latent_correlation",
    "ENDPOINTS",
]
