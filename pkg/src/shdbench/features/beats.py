"""R-peak detection: band-pass, derivative, squaring, moving-window integration, adaptive threshold."""

from __future__ import annotations

import numpy as np
from scipy import signal

from ..data.types import SAMPLING_RATE

REFRACTORY_S = 0.2
INTEGRATION_S = 0.15
LEARNING_S = 2.0
NO_BEATS = np.empty(0, dtype=np.int64)


def _bandpass(x: np.ndarray, fs: int) -> np.ndarray:
    sos = signal.butter(2, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x)


def detect_beats(lead_signal, fs: int = SAMPLING_RATE) -> np.ndarray:
    """Sample indices of R peaks in one lead.

    Returns strictly increasing indices at least 200 ms apart, or an empty
    array when fewer than two beats are found (the insufficient-beats marker).
    All thresholds are relative, so rescaling the signal by ``c > 0`` does
    not change the result.
    """
    x = np.asarray(lead_signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single lead, got shape {x.shape}")
    if x.size < fs or not np.isfinite(x).all() or np.ptp(x) == 0:
        return NO_BEATS
    filtered = _bandpass(x, fs)
    energy = np.gradient(filtered) ** 2
    win = max(1, int(round(INTEGRATION_S * fs)))
    mwi = np.convolve(energy, np.ones(win) / win, mode="same")
    if mwi.max() <= 0:
        return NO_BEATS

    refractory = int(round(REFRACTORY_S * fs))
    candidates, _ = signal.find_peaks(mwi, distance=refractory)
    learn = mwi[: int(LEARNING_S * fs)]
    spk, npk = 0.25 * learn.max(), 0.5 * learn.mean()
    accepted = []
    for c in candidates:
        level = mwi[c]
        if level > npk + 0.25 * (spk - npk):
            accepted.append(c)
            spk = 0.125 * level + 0.875 * spk
        else:
            npk = 0.125 * level + 0.875 * npk

    # move each detection onto the extreme of the band-passed signal nearby
    half = win // 2 + 3
    peaks = []
    for c in accepted:
        lo, hi = max(0, c - half), min(x.size, c + half + 1)
        local = x[lo:hi] - np.median(x[lo:hi])
        p = lo + int(np.argmax(np.abs(local)))
        if peaks and p - peaks[-1] < refractory:
            if abs(x[p]) > abs(x[peaks[-1]]):
                peaks[-1] = p
            continue
        peaks.append(p)
    if len(peaks) < 2:
        return NO_BEATS
    return np.asarray(peaks, dtype=np.int64)
