"""One-vs-rest boosted trees over the engineered descriptors, plus a seeded random search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.ensemble import HistGradientBoostingClassifier
from xgboost import XGBClassifier

from ..data._validation import check_multilabel
from ..data.types import ENDPOINTS
from ..eval.metrics import macro_auroc

logger = logging.getLogger(__name__)

FAMILIES = ("xgboost", "hist_gbdt")
PROBA_EPS = 1e-7


def endpoint_seed(random_state: int, j: int) -> int:
    """Seed stream owned by endpoint ``j``; independent of every other endpoint."""
    return int(np.random.SeedSequence([int(random_state), j]).generate_state(1)[0] % (2**31 - 1))


def _check_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
    if np.isinf(X).any():
        raise ValueError("features contain infinite values")
    return X


class BoostedTreeOvR(ClassifierMixin, BaseEstimator):
    """One independent binary boosted-tree model per label column.

    Missing descriptors (NaN) are routed by the trees' default directions.
    ``family`` selects the implementation; xgboost is the default.
    """

    def __init__(
        self,
        family: str = "xgboost",
        n_estimators: int = 200,
        max_depth: int = 4,
        learning_rate: float = 0.05,
        subsample: float = 0.8,
        colsample_bytree: float = 0.8,
        min_child_weight: float = 1.0,
        reg_lambda: float = 1.0,
        random_state: int = 0,
        n_jobs: int = 1,
    ):
        self.family = family
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.colsample_bytree = colsample_bytree
        self.min_child_weight = min_child_weight
        self.reg_lambda = reg_lambda
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _make(self, j: int):
        seed = endpoint_seed(self.random_state, j)
        if self.family == "xgboost":
            return XGBClassifier(
                n_estimators=self.n_estimators,
                max_depth=self.max_depth,
                learning_rate=self.learning_rate,
                subsample=self.subsample,
                colsample_bytree=self.colsample_bytree,
                min_child_weight=self.min_child_weight,
                reg_lambda=self.reg_lambda,
                tree_method="hist",
                objective="binary:logistic",
                n_jobs=self.n_jobs,
                random_state=seed,
                verbosity=0,
            )
        if self.family == "hist_gbdt":
            return HistGradientBoostingClassifier(
                max_iter=self.n_estimators,
                max_depth=self.max_depth,
                learning_rate=self.learning_rate,
                l2_regularization=self.reg_lambda,
                early_stopping=False,
                random_state=seed,
            )
        raise ValueError(f"unknown boosting family {self.family!r}; choose from {FAMILIES}")

    def _fit_one(self, X: np.ndarray, y: np.ndarray, j: int):
        n_pos = int(y.sum())
        name = self.label_names_[j]
        if n_pos == 0:
            raise ValueError(f"endpoint {name}: no positive samples in the training data")
        if n_pos == len(y):
            raise ValueError(f"endpoint {name}: no negative samples in the training data")
        return self._make(j).fit(X, y)

    def fit(self, X, Y):
        X = _check_features(X)
        Y = check_multilabel(Y, n_rows=len(X))
        self.n_features_in_ = X.shape[1]
        self.n_labels_ = Y.shape[1]
        self.label_names_ = list(ENDPOINTS) if Y.shape[1] == len(ENDPOINTS) else [f"label_{j}" for j in range(Y.shape[1])]
        self.estimators_ = [self._fit_one(X, Y[:, j], j) for j in range(Y.shape[1])]
        return self

    def refit_endpoint(self, X, y, j: int):
        """Retrain only endpoint ``j``; the other models are left untouched."""
        X = _check_features(X)
        y = check_multilabel(y, n_rows=len(X))[:, 0]
        self.estimators_[j] = self._fit_one(X, y, j)
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Positive-class probability per label, shape (n, labels), inside (0, 1)."""
        X = _check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        p = np.column_stack([est.predict_proba(X)[:, 1] for est in self.estimators_]).astype(np.float64)
        return np.clip(p, PROBA_EPS, 1.0 - PROBA_EPS)

    def decision_function(self, X) -> np.ndarray:
        p = self.predict_proba(X)
        return np.log(p) - np.log1p(-p)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    @property
    def n_parameters_(self) -> int:
        """Total tree node count across all endpoint models."""
        total = 0
        for est in self.estimators_:
            if isinstance(est, XGBClassifier):
                total += len(est.get_booster().trees_to_dataframe())
            else:
                total += sum(len(p.nodes) for it in est._predictors for p in it)
        return int(total)

    def gain_importance(self) -> np.ndarray:
        """Per-endpoint total split gain per feature, shape (labels, features)."""
        if self.family != "xgboost":
            raise NotImplementedError("gain importance is available for the xgboost family only")
        out = np.zeros((len(self.estimators_), self.n_features_in_))
        for j, est in enumerate(self.estimators_):
            for key, value in est.get_booster().get_score(importance_type="total_gain").items():
                out[j, int(key[1:])] = value
        return out


def train_gbdt_ovr(features, labels, hyperparams: dict | None = None, seed: int = 0) -> BoostedTreeOvR:
    values = getattr(features, "values", features)
    return BoostedTreeOvR(**(hyperparams or {}), random_state=seed).fit(values, labels)


@dataclass
class TuningResult:
    best_params: dict
    best_score: float
    trials: list[dict] = field(default_factory=list)


def sample_params(search_space: dict, rng: np.random.Generator) -> dict:
    """Draw one configuration.

    A list is a categorical choice; ``(lo, hi)`` is uniform (integer when both
    bounds are ints); ``("log", lo, hi)`` is log-uniform. The mapping form
    ``{low, high, log}`` (as read from YAML) is accepted too.
    """
    params = {}
    for name in sorted(search_space):
        spec = search_space[name]
        if isinstance(spec, dict):
            spec = ("log", spec["low"], spec["high"]) if spec.get("log") else (spec["low"], spec["high"])
        if isinstance(spec, list):
            params[name] = spec[int(rng.integers(len(spec)))]
        elif isinstance(spec, tuple) and len(spec) == 3 and spec[0] == "log":
            params[name] = float(math.exp(rng.uniform(math.log(spec[1]), math.log(spec[2]))))
        elif isinstance(spec, tuple) and len(spec) == 2:
            lo, hi = spec
            if isinstance(lo, int) and isinstance(hi, int):
                params[name] = int(rng.integers(lo, hi + 1))
            else:
                params[name] = float(rng.uniform(lo, hi))
        else:
            raise ValueError(f"unsupported search space entry for {name!r}: {spec!r}")
    return params


def tune_gbdt(
    X_train,
    Y_train,
    X_val,
    Y_val,
    search_space: dict,
    trials: int,
    seed: int = 0,
    base: BoostedTreeOvR | None = None,
) -> TuningResult:
    """Random search maximising mean validation AUROC across labels.

    Every trial is logged and kept in ``TuningResult.trials``; ties keep the
    earliest trial.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    base = base if base is not None else BoostedTreeOvR(random_state=seed)
    rng = np.random.default_rng(seed)
    result = TuningResult(best_params={}, best_score=-math.inf)
    for t in range(trials):
        params = sample_params(search_space, rng)
        model = clone(base).set_params(**params).fit(X_train, Y_train)
        score = macro_auroc(model.predict_proba(X_val), np.asarray(Y_val))
        result.trials.append({"trial": t, "params": params, "val_macro_auroc": score})
        logger.info("gbdt trial %d: %s -> %.4f", t, params, score)
        if t == 0 or score > result.best_score:
            result.best_params, result.best_score = params, score
    return result
