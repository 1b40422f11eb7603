"""Engineered per-record descriptors, computed in catalogue order."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin

from ..data._validation import check_waveforms
from ..data.types import LEAD_NAMES, SAMPLING_RATE
from .beats import detect_beats
from .catalog import BANDS, CORRELATION_PAIRS, FeatureCatalog, load_catalog

LEAD_INDEX = {name: i for i, name in enumerate(LEAD_NAMES)}
# beat-relative windows, in samples at 250 Hz
PR_WINDOW = (-25, -12)  # isoelectric reference before the QRS
QRS_HALF = 25
R_HALF = 12
ST_OFFSET = 20
T_WINDOW = (25, 113)
REFERENCE_LEADS = ("II", "V5", "I")


def _timing(peaks: np.ndarray, fs: int) -> dict[str, float]:
    nan = math.nan
    if peaks.size < 2:
        return dict.fromkeys(("rr_mean", "rr_std", "rr_p5", "rr_p95", "hr_mean", "rmssd_mean", "pnn50_mean", "sdsd_std"), nan)
    rr = np.diff(peaks) / fs
    out = {
        "rr_mean": rr.mean(),
        "rr_std": rr.std(),
        "rr_p5": np.percentile(rr, 5),
        "rr_p95": np.percentile(rr, 95),
        "hr_mean": np.mean(60.0 / rr),
    }
    d = np.diff(rr)
    if d.size:
        out |= {"rmssd_mean": math.sqrt(np.mean(d * d)), "pnn50_mean": np.mean(np.abs(d) > 0.05), "sdsd_std": d.std()}
    else:
        out |= {"rmssd_mean": nan, "pnn50_mean": nan, "sdsd_std": nan}
    return {k: float(v) for k, v in out.items()}


def _reference_beats(x: np.ndarray, fs: int) -> np.ndarray:
    for lead in REFERENCE_LEADS:
        peaks = detect_beats(x[LEAD_INDEX[lead]], fs)
        if peaks.size:
            return peaks
    return peaks


def _beat_windows(peaks: np.ndarray, n: int) -> np.ndarray:
    lo = max(-PR_WINDOW[0], QRS_HALF)
    hi = max(T_WINDOW[1], QRS_HALF + 1)
    return peaks[(peaks - lo >= 0) & (peaks + hi <= n)]


def _morphology(x: np.ndarray, beats: np.ndarray) -> dict[str, np.ndarray]:
    """Per-lead, per-beat amplitude and width measures; arrays shaped (leads, beats)."""
    base_idx = beats[:, None] + np.arange(*PR_WINDOW)
    base = np.median(x[:, base_idx], axis=2)

    r_seg = x[:, beats[:, None] + np.arange(-R_HALF, R_HALF + 1)] - base[..., None]
    r_amp = r_seg.max(axis=2)

    qrs = x[:, beats[:, None] + np.arange(-QRS_HALF, QRS_HALF + 1)] - base[..., None]
    mag = np.abs(qrs)
    above = mag >= 0.3 * mag.max(axis=2, keepdims=True)
    centre = mag.argmax(axis=2)
    # contiguous supra-threshold run around the largest deflection
    idx = np.arange(qrs.shape[2])
    below = ~above
    left = np.where(below & (idx < centre[..., None]), idx, -1).max(axis=2) + 1
    right = np.where(below & (idx > centre[..., None]), idx, qrs.shape[2]).min(axis=2) - 1
    qrs_width = (right - left + 1) * 1000.0 / SAMPLING_RATE
    qrs_width = np.where(mag.max(axis=2) > 0, qrs_width, np.nan)

    st_level = x[:, beats + ST_OFFSET] - base

    t_seg = x[:, beats[:, None] + np.arange(*T_WINDOW)] - base[..., None]
    t_pick = np.abs(t_seg).argmax(axis=2)
    t_amp = np.take_along_axis(t_seg, t_pick[..., None], axis=2)[..., 0]

    area = qrs.sum(axis=2)
    return {"r_amp": r_amp, "qrs_width": qrs_width, "t_amp": t_amp, "st_level": st_level, "qrs_area": area}


def _band_powers(x: np.ndarray, fs: int) -> np.ndarray:
    """Relative power per lead and band, shape (leads, bands); rows sum to 1."""
    freqs, psd = signal.welch(x, fs=fs, nperseg=min(512, x.shape[1]), axis=1)
    power = np.stack([psd[:, (freqs >= lo) & (freqs < hi)].sum(axis=1) for lo, hi in BANDS], axis=1)
    total = power.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, power / total, np.nan)


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return math.nan
    return float(np.clip(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb), -1.0, 1.0))


def compute_feature_values(record, fs: int = SAMPLING_RATE) -> dict[str, float]:
    """Every default-catalogue descriptor for one (12, n) record, keyed by id."""
    x = np.asarray(record, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(LEAD_NAMES):
        raise ValueError(f"record must have shape (12, n), got {x.shape}")
    values: dict[str, float] = {}

    for lead in ("I", "II", "V5"):
        for key, v in _timing(detect_beats(x[LEAD_INDEX[lead]], fs), fs).items():
            name, agg = key.rsplit("_", 1)
            values[f"{name}_{agg}_{lead}"] = v

    beats = _beat_windows(_reference_beats(x, fs), x.shape[1])
    morph = _morphology(x, beats) if beats.size else None
    for i, lead in enumerate(LEAD_NAMES):
        for name in ("r_amp", "qrs_width", "t_amp", "st_level"):
            if morph is None:
                values[f"{name}_mean_{lead}"] = values[f"{name}_std_{lead}"] = math.nan
                continue
            row = morph[name][i]
            values[f"{name}_mean_{lead}"] = float(np.mean(row))
            values[f"{name}_std_{lead}"] = float(np.std(row))

    rel = _band_powers(x, fs)
    for i, lead in enumerate(LEAD_NAMES):
        for j, (lo, hi) in enumerate(BANDS):
            values[f"relpow_{lo:g}_{hi:g}hz_{lead}"] = float(rel[i, j])

    for a, b in CORRELATION_PAIRS:
        values[f"corr_{a}_{b}"] = _corr(x[LEAD_INDEX[a]], x[LEAD_INDEX[b]])
    if morph is None:
        values["qrs_axis_deg"] = math.nan
    else:
        area = morph["qrs_area"].mean(axis=1)
        values["qrs_axis_deg"] = float(np.degrees(np.arctan2(area[LEAD_INDEX["aVF"]], area[LEAD_INDEX["I"]])))
    return values


def extract_features(record, catalog: FeatureCatalog | None = None, fs: int = SAMPLING_RATE) -> np.ndarray:
    """Descriptor vector in catalogue order; NaN marks a missing entry."""
    catalog = catalog if catalog is not None else load_catalog()
    values = compute_feature_values(record, fs)
    unknown = [fid for fid in catalog.ids if fid not in values]
    if unknown:
        raise KeyError(f"catalogue ids without an extractor: {unknown[:5]}")
    return np.array([values[fid] for fid in catalog.ids], dtype=np.float64)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    record_ids: np.ndarray
    catalog: FeatureCatalog

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.record_ids = np.asarray(self.record_ids).astype(str)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.catalog):
            raise ValueError(f"feature matrix has {self.values.shape[-1]} columns, catalogue has {len(self.catalog)}")
        if len(self.record_ids) != len(self.values):
            raise ValueError("record ids and rows differ in length")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.catalog.ids)
        frame.insert(0, "record_id", self.record_ids)
        return frame


def write_feature_matrix(fm: FeatureMatrix, path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# feature catalog {fm.catalog.version}\n")
        fm.to_frame().to_csv(fh, index=False, na_rep="", float_format="%.17g", lineterminator="\n")
    return path


def read_feature_matrix(path: str | os.PathLike, catalog: FeatureCatalog | None = None) -> FeatureMatrix:
    catalog = catalog if catalog is not None else load_catalog()
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    version = first[1:].split()[2] if first.startswith("# feature catalog") else None
    if version is not None and version != catalog.version:
        raise ValueError(f"{path}: matrix built with catalogue {version}, expected {catalog.version}")
    frame = pd.read_csv(path, skiprows=1 if version else 0, dtype={"record_id": str}, float_precision="round_trip")
    if list(frame.columns[1:]) != catalog.ids:
        raise ValueError(f"{path}: columns do not match the catalogue")
    return FeatureMatrix(frame[catalog.ids].to_numpy(dtype=np.float64), frame["record_id"].to_numpy(), catalog)


class EcgFeatureExtractor(TransformerMixin, BaseEstimator):
    """Map ``(n, 12, 2500)`` waveforms to the descriptor matrix.

    Stateless: ``fit`` only records the catalogue. Rows come back in input
    order for any ``n_jobs``.
    """

    def __init__(self, catalog=None, n_jobs: int = 1):
        self.catalog = catalog
        self.n_jobs = n_jobs

    def _resolve_catalog(self) -> FeatureCatalog:
        if isinstance(self.catalog, FeatureCatalog):
            return self.catalog
        return load_catalog(self.catalog)

    def fit(self, X, y=None):
        check_waveforms(X)
        self.catalog_ = self._resolve_catalog()
        self.n_features_out_ = len(self.catalog_)
        return self

    def transform(self, X) -> np.ndarray:
        X = check_waveforms(X)
        catalog = getattr(self, "catalog_", None) or self._resolve_catalog()
        if self.n_jobs == 1:
            rows = [extract_features(X[i], catalog) for i in range(len(X))]
        else:
            rows = Parallel(n_jobs=self.n_jobs)(delayed(extract_features)(np.asarray(X[i]), catalog) for i in range(len(X)))
        return np.vstack(rows) if rows else np.empty((0, len(catalog)))

    def get_feature_names_out(self, input_features=None):
        catalog = getattr(self, "catalog_", None) or self._resolve_catalog()
        return np.asarray(catalog.ids, dtype=object)
