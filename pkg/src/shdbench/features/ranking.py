"""Global descriptor ranking from three importance sources, and the top-k sensitivity curve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.base import clone
from sklearn.feature_selection import mutual_info_classif
from sklearn.inspection import permutation_importance

from ..eval.metrics import macro_auroc
from .boosting import BoostedTreeOvR

WEIGHTS = (0.30, 0.40, 0.30)  # mutual information, gain, permutation


def rank_normalize(scores) -> np.ndarray:
    """Map scores to [0, 1] by average rank; the largest score gets 1."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 1:
        return np.ones(1)
    return (rankdata(s) - 1.0) / (s.size - 1.0)


def combine_scores(mi, gain, permutation, weights=WEIGHTS) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if not np.isclose(w.sum(), 1.0) or (w < 0).any():
        raise ValueError(f"weights must be non-negative and sum to 1, got {weights}")
    return w[0] * rank_normalize(mi) + w[1] * rank_normalize(gain) + w[2] * rank_normalize(permutation)


@dataclass
class FeatureRanking:
    ids: list[str]
    mi: np.ndarray
    gain: np.ndarray
    permutation: np.ndarray
    weights: tuple[float, float, float] = WEIGHTS

    def __post_init__(self):
        self.combined = combine_scores(self.mi, self.gain, self.permutation, self.weights)
        # best first; ties keep catalogue order
        self.order = np.argsort(-self.combined, kind="stable")

    @property
    def ranked_ids(self) -> list[str]:
        return [self.ids[i] for i in self.order]

    def rank_of(self, feature_id: str) -> int:
        """1-based position in the global ranking."""
        return int(np.flatnonzero(self.order == self.ids.index(feature_id))[0]) + 1

    def top(self, k: int) -> np.ndarray:
        """Column indices of the ``k`` best features, in original column order."""
        if not 1 <= k <= len(self.ids):
            raise ValueError(f"k must lie in [1, {len(self.ids)}], got {k}")
        return np.sort(self.order[:k])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "feature": self.ids,
                "mi": self.mi,
                "gain": self.gain,
                "permutation": self.permutation,
                "mi_norm": rank_normalize(self.mi),
                "gain_norm": rank_normalize(self.gain),
                "perm_norm": rank_normalize(self.permutation),
                "combined": self.combined,
            }
        )
        frame = frame.iloc[self.order].reset_index(drop=True)
        frame.insert(0, "rank", np.arange(1, len(frame) + 1))
        return frame


def _median_impute(X: np.ndarray) -> np.ndarray:
    X = X.copy()
    for c in np.flatnonzero(np.isnan(X).any(axis=0)):
        col = X[:, c]
        finite = col[~np.isnan(col)]
        col[np.isnan(col)] = np.median(finite) if finite.size else 0.0
    return X


def mutual_information(X, Y, seed: int = 0) -> np.ndarray:
    """Mean over labels of the MI between each feature and the label; constant features score 0."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    Xi = _median_impute(X)
    constant = np.ptp(Xi, axis=0) == 0
    mi = np.zeros(X.shape[1])
    if (~constant).any():
        cols = Xi[:, ~constant]
        mi[~constant] = np.mean([mutual_info_classif(cols, Y[:, j], random_state=seed) for j in range(Y.shape[1])], axis=0)
    return mi


def permutation_scores(model: BoostedTreeOvR, X, Y, seed: int = 0, n_repeats: int = 3) -> np.ndarray:
    """Mean over labels of the AUROC drop when each column is shuffled."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    drops = []
    for j, est in enumerate(model.estimators_):
        res = permutation_importance(est, X, Y[:, j], scoring="roc_auc", n_repeats=n_repeats, random_state=seed)
        drops.append(res.importances_mean)
    out = np.mean(drops, axis=0)
    out[np.ptp(np.nan_to_num(X, nan=np.inf), axis=0) == 0] = 0.0
    return out


def rank_features(X, Y, model: BoostedTreeOvR, ids, seed: int = 0, *, n_repeats: int = 3) -> FeatureRanking:
    """Rank features on the training data the one-vs-rest suite was fitted to.

    Raw source scores are averaged over labels first, then rank-normalised
    and combined.
    """
    ids = list(ids)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != len(ids):
        raise ValueError(f"{len(ids)} ids for {X.shape[1]} feature columns")
    return FeatureRanking(
        ids=ids,
        mi=mutual_information(X, Y, seed),
        gain=model.gain_importance().mean(axis=0),
        permutation=permutation_scores(model, X, Y, seed, n_repeats),
    )


def topk_sensitivity(X_train, Y_train, X_val, Y_val, ranking: FeatureRanking, k_grid, model: BoostedTreeOvR | None = None) -> pd.DataFrame:
    """Retrain the suite on the top-k columns for each ``k`` and score mean validation AUROC."""
    X_train = np.asarray(X_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    n = len(ranking.ids)
    ks = [int(k) for k in k_grid]
    bad = [k for k in ks if not 1 <= k <= n]
    if bad:
        raise ValueError(f"k values outside [1, {n}]: {bad}")
    base = model if model is not None else BoostedTreeOvR()
    rows = []
    for k in ks:
        cols = ranking.top(k)
        fitted = clone(base).fit(X_train[:, cols], Y_train)
        rows.append({"k": k, "val_macro_auroc": macro_auroc(fitted.predict_proba(X_val[:, cols]), np.asarray(Y_val))})
    return pd.DataFrame(rows)
