"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .types import N_COVARIATES, N_LEADS, N_SAMPLES


def check_waveforms(X, *, allow_empty: bool = False):
    """Check an ``(n, 12, 2500)`` array-like without materialising it."""
    shape = getattr(X, "shape", None)
    if shape is None:
        X = np.asarray(X, dtype=np.float32)
        shape = X.shape
    if len(shape) != 3 or tuple(shape[1:]) != (N_LEADS, N_SAMPLES):
        raise ValueError(f"waveforms must have shape (n, {N_LEADS}, {N_SAMPLES}), got {tuple(shape)}")
    if not allow_empty and shape[0] == 0:
        raise ValueError("found an empty waveform array")
    return X


def check_multilabel(Y, n_rows: int | None = None, n_labels: int | None = None) -> np.ndarray:
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2:
        raise ValueError(f"labels must be a 2-D indicator matrix, got shape {Y.shape}")
    if not np.isin(Y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if n_rows is not None and len(Y) != n_rows:
        raise ValueError(f"labels have {len(Y)} rows, inputs have {n_rows}")
    if n_labels is not None and Y.shape[1] != n_labels:
        raise ValueError(f"expected {n_labels} label columns, got {Y.shape[1]}")
    return Y.astype(np.int64)


def check_covariates(U, n_rows: int | None = None, *, strict: bool = False) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != N_COVARIATES:
        raise ValueError(f"covariates must have shape (n, {N_COVARIATES}), got {U.shape}")
    if n_rows is not None and len(U) != n_rows:
        raise ValueError(f"covariates have {len(U)} rows, inputs have {n_rows}")
    if strict and not np.isfinite(U).all():
        raise ValueError("non-finite covariate values")
    return U
