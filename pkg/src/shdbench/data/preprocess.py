"""Waveform preprocessing: median-filter baseline removal, percentile clipping, scalar normalisation."""

from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path
from typing import Callable, Iterable, Iterator

import bottleneck as bn
import numpy as np
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_waveforms
from .types import SAMPLING_RATE, DegenerateStatsError, PreprocessStats

logger = logging.getLogger(__name__)

# 200 ms then 600 ms at 250 Hz
DEFAULT_WINDOWS = (51, 151)
DEFAULT_PERCENTILES = (0.1, 99.9)
CHUNK = 128
_BINS = 1 << 16
_MAX_BIN_VALUES = 4_000_000


def moving_median(x: np.ndarray, window: int) -> np.ndarray:
    """Centred running median along the last axis with mirror-reflected edges."""
    if window == 1:
        return np.array(x, dtype=np.float64)
    half = window // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    padded = np.pad(np.asarray(x, dtype=np.float64), pad, mode="reflect")
    return bn.move_median(padded, window, axis=-1)[..., window - 1 :]


def estimate_baseline(w: np.ndarray, windows=DEFAULT_WINDOWS) -> np.ndarray:
    base = np.asarray(w, dtype=np.float64)
    for win in windows:
        base = moving_median(base, win)
    return base


def remove_baseline(w: np.ndarray, windows=DEFAULT_WINDOWS) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return w - estimate_baseline(w, windows)


def nearest_rank_index(percentile: float, n: int) -> int:
    """0-based order-statistic index for a percentile (round half up on ``p/100 * (n-1)``)."""
    if n < 1:
        raise ValueError("need at least one sample")
    return int(np.floor(percentile / 100.0 * (n - 1) + 0.5))


def _iter_chunks(waveforms, chunk: int = CHUNK) -> Iterator[np.ndarray]:
    for start in range(0, len(waveforms), chunk):
        yield np.asarray(waveforms[start : start + chunk], dtype=np.float64).ravel()


def _select_order_statistic(chunks: Callable[[], Iterable[np.ndarray]], k: int, lo: float, hi: float) -> float:
    """Exact k-th smallest value (0-based) by repeated histogram refinement over streamed chunks."""
    filters: list[tuple[float, float, int]] = []

    def member(v: np.ndarray) -> np.ndarray:
        keep = np.ones(v.shape, dtype=bool)
        for flo, fhi, fb in filters:
            keep &= _bin_index(v, flo, fhi) == fb
        return keep

    below = 0
    while True:
        if lo == hi:
            return float(lo)
        counts = np.zeros(_BINS, dtype=np.int64)
        for v in chunks():
            v = v[member(v)] if filters else v
            counts += np.bincount(_bin_index(v, lo, hi), minlength=_BINS)
        cum = np.cumsum(counts)
        b = int(np.searchsorted(cum, k - below, side="right"))
        before = below + (int(cum[b - 1]) if b > 0 else 0)
        if counts[b] <= _MAX_BIN_VALUES:
            filters.append((lo, hi, b))
            vals = np.concatenate([v[member(v)] for v in chunks()])
            vals.sort()
            return float(vals[k - before])
        width = (hi - lo) / _BINS
        filters.append((lo, hi, b))
        below = before
        lo, hi = lo + b * width, min(hi, lo + (b + 1) * width)


def _bin_index(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.zeros(v.shape, dtype=np.int64)
    idx = np.floor((v - lo) / (hi - lo) * _BINS).astype(np.int64)
    return np.clip(idx, 0, _BINS - 1)


def fit_preprocess_stats(
    train_waveforms,
    *,
    windows=DEFAULT_WINDOWS,
    percentiles=DEFAULT_PERCENTILES,
    detrend: bool = True,
) -> PreprocessStats:
    """Fit clip bounds and normalisation constants on training-split waveforms.

    Clip bounds are nearest-rank percentiles over every sample pooled across
    leads and records; mean/std are scalars over the clipped samples. With
    ``detrend`` the baseline is removed first, matching the order in which
    :func:`preprocess_waveform` applies the steps.
    """
    if len(train_waveforms) == 0:
        raise ValueError("fit_preprocess_stats needs at least one training waveform")
    source = train_waveforms
    tmp_path = None
    if detrend:
        source, tmp_path = _detrended_copy(train_waveforms, windows)
    try:
        chunks = lambda: _iter_chunks(source)  # noqa: E731
        n = 0
        lo, hi = np.inf, -np.inf
        for v in chunks():
            n += v.size
            lo, hi = min(lo, float(v.min())), max(hi, float(v.max()))
        if lo == hi:
            raise DegenerateStatsError("all training samples are identical; cannot fit clip bounds")
        clip_low = _select_order_statistic(chunks, nearest_rank_index(percentiles[0], n), lo, hi)
        clip_high = _select_order_statistic(chunks, nearest_rank_index(percentiles[1], n), lo, hi)
        if not clip_low < clip_high:
            raise DegenerateStatsError(f"clip bounds collapse to {clip_low}")
        s1 = s2 = 0.0
        for v in chunks():
            c = np.clip(v, clip_low, clip_high)
            s1 += float(c.sum())
            s2 += float(np.square(c).sum())
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0)
        std = float(np.sqrt(var))
        if not std > 0:
            raise DegenerateStatsError("clipped training samples have zero variance")
    finally:
        if tmp_path is not None:
            del source
            os.unlink(tmp_path)
    return PreprocessStats(
        clip_low=clip_low,
        clip_high=clip_high,
        mean=mean,
        std=std,
        median_windows=tuple(int(w) for w in windows),
        percentiles=tuple(float(p) for p in percentiles),
        n_samples=int(n),
    )


def _detrended_copy(waveforms, windows):
    shape = (len(waveforms),) + tuple(np.shape(waveforms[0]))
    nbytes = int(np.prod(shape)) * 4
    if nbytes <= 256 * 2**20:
        out = np.empty(shape, dtype=np.float32)
        tmp_path = None
    else:
        fd, tmp_path = tempfile.mkstemp(suffix=".detrended")
        os.close(fd)
        out = np.memmap(tmp_path, dtype=np.float32, mode="w+", shape=shape)
    for start in range(0, len(waveforms), CHUNK):
        block = np.asarray(waveforms[start : start + CHUNK])
        out[start : start + len(block)] = remove_baseline(block, windows)
    return out, tmp_path


def clip_and_normalize(w: np.ndarray, stats: PreprocessStats) -> np.ndarray:
    return (np.clip(w, stats.clip_low, stats.clip_high) - stats.mean) / stats.std


def preprocess_waveform(w: np.ndarray, stats: PreprocessStats) -> np.ndarray:
    """Baseline removal, clipping and normalisation of one 12x2500 matrix (or a stack)."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-2:] != (12, 2500):
        raise ValueError(f"waveform must end in shape (12, 2500), got {w.shape}")
    return clip_and_normalize(remove_baseline(w, stats.median_windows), stats)


def save_stats(stats: PreprocessStats, path: str | os.PathLike) -> None:
    doc = {
        "clip_low": stats.clip_low,
        "clip_high": stats.clip_high,
        "mean": stats.mean,
        "std": stats.std,
        "median_windows_samples": list(stats.median_windows),
        "median_windows_ms": [round(w * 1000 / SAMPLING_RATE) for w in stats.median_windows],
        "percentiles": list(stats.percentiles),
        "n_samples": stats.n_samples,
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


def load_stats(path: str | os.PathLike) -> PreprocessStats:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return PreprocessStats(
        clip_low=float(doc["clip_low"]),
        clip_high=float(doc["clip_high"]),
        mean=float(doc["mean"]),
        std=float(doc["std"]),
        median_windows=tuple(int(w) for w in doc["median_windows_samples"]),
        percentiles=tuple(float(p) for p in doc.get("percentiles", DEFAULT_PERCENTILES)),
        n_samples=int(doc.get("n_samples", 0)),
    )


class WaveformPreprocessor(TransformerMixin, BaseEstimator):
    """Fit clip/normalisation statistics on training waveforms and apply them.

    Parameters
    ----------
    windows : tuple of int
        Median-filter window lengths (samples) of the two baseline passes.
    percentiles : tuple of float
        Lower and upper clip percentiles.
    """

    def __init__(self, windows=DEFAULT_WINDOWS, percentiles=DEFAULT_PERCENTILES):
        self.windows = windows
        self.percentiles = percentiles

    def fit(self, X, y=None):
        check_waveforms(X)
        self.stats_ = fit_preprocess_stats(X, windows=self.windows, percentiles=self.percentiles)
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        check_waveforms(X)
        out = np.empty((len(X), 12, 2500), dtype=np.float32)
        for start in range(0, len(X), CHUNK):
            block = np.asarray(X[start : start + CHUNK])
            out[start : start + len(block)] = preprocess_waveform(block, self.stats_)
        return out
