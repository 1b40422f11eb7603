"""Estimator-style wrappers around the neural models and the one-model-per-label suite."""

from __future__ import annotations

import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone

from ..data._validation import check_covariates, check_multilabel, check_waveforms
from ..features.boosting import endpoint_seed
from ..models.checkpoint import load_pretrained_backbone
from ..models.config import AdaptationPolicy, FusionConfig, LoraConfig, resnet_config, transformer_config
from ..models.network import EcgNet
from ..models.policy import ParamBudget, apply_freezing_policy
from .ssl import SslConfig, ssl_pretrain
from .supervised import TrainConfig, predict_logits, train_supervised

logger = logging.getLogger(__name__)

PROBA_EPS = 1e-7


class CovariateScaler:
    """Train-split standardisation; missing values become the training mean (0 after scaling)."""

    def fit(self, U):
        U = np.asarray(U, dtype=np.float64)
        self.mean_ = np.nan_to_num(np.nanmean(U, axis=0)) if len(U) else np.zeros(U.shape[1])
        std = np.nanstd(U, axis=0)
        self.scale_ = np.where(np.isfinite(std) & (std > 0), std, 1.0)
        return self

    def transform(self, U):
        Z = (np.asarray(U, dtype=np.float64) - self.mean_) / self.scale_
        return np.where(np.isfinite(Z), Z, 0.0)


class EcgNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Multi-label waveform classifier.

    ``arch`` is ``"resnet1d"`` or ``"conv_transformer"``. For the transformer,
    ``b`` (default: all blocks), ``conv_trainable`` and ``lora_rank`` set the
    adaptation policy and ``ssl_steps > 0`` runs self-supervised adaptation
    first. ``fusion`` other than ``"none"`` requires covariates.
    """

    def __init__(
        self,
        arch: str = "conv_transformer",
        preset: str = "mini",
        b: int | None = None,
        conv_trainable: bool = False,
        lora_rank: int | None = None,
        fusion: str = "none",
        max_epochs: int = 20,
        batch_size: int = 16,
        lr_backbone: float = 1e-4,
        lr_head: float = 1e-3,
        patience: int = 5,
        ssl_steps: int = 0,
        ssl_batch_size: int = 16,
        pretrained: str | None = None,
        config_overrides: dict | None = None,
        validation_fraction: float = 0.1,
        random_state: int = 0,
        dtype: str = "float32",
    ):
        self.arch = arch
        self.preset = preset
        self.b = b
        self.conv_trainable = conv_trainable
        self.lora_rank = lora_rank
        self.fusion = fusion
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.lr_backbone = lr_backbone
        self.lr_head = lr_head
        self.patience = patience
        self.ssl_steps = ssl_steps
        self.ssl_batch_size = ssl_batch_size
        self.pretrained = pretrained
        self.config_overrides = config_overrides
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.dtype = dtype

    # -- construction -------------------------------------------------
    def _backbone_config(self, n_labels: int):
        overrides = dict(self.config_overrides or {}, n_labels=n_labels)
        if self.arch == "resnet1d":
            return resnet_config(self.preset, **overrides)
        if self.arch == "conv_transformer":
            return transformer_config(self.preset, **overrides)
        raise ValueError(f"unknown arch {self.arch!r}")

    def policy(self, n_blocks: int) -> AdaptationPolicy | None:
        if self.arch == "resnet1d":
            return None
        lora = LoraConfig(self.lora_rank) if self.lora_rank else None
        b = 0 if lora else (n_blocks if self.b is None else self.b)
        return AdaptationPolicy(b=b, conv_trainable=self.conv_trainable, lora=lora)

    def build(self, n_labels: int) -> EcgNet:
        """Construct the initialised network (before any training)."""
        cfg = self._backbone_config(n_labels)
        torch.manual_seed(self.random_state)
        model = EcgNet(cfg, FusionConfig(self.fusion)).to(getattr(torch, self.dtype))
        if self.pretrained:
            load_pretrained_backbone(model.backbone, self.pretrained, required=True)
        return model

    # -- fitting ------------------------------------------------------
    def _split_validation(self, n: int):
        rng = np.random.default_rng(np.random.SeedSequence([self.random_state, 2]))
        perm = rng.permutation(n)
        n_val = max(1, int(round(self.validation_fraction * n)))
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])

    def fit(self, X, Y, covariates=None, eval_set=None):
        X = check_waveforms(X)
        Y = check_multilabel(Y, n_rows=len(X))
        if self.fusion != "none" and covariates is None:
            raise ValueError(f"fusion={self.fusion!r} needs covariates")
        U = None if covariates is None or self.fusion == "none" else check_covariates(covariates, len(X))
        if eval_set is None:
            tr, va = self._split_validation(len(X))
            Xv, Yv, Uv = X[va], Y[va], None if U is None else U[va]
            X, Y, U = X[tr], Y[tr], None if U is None else U[tr]
        else:
            Xv, Yv, *rest = eval_set
            Xv = check_waveforms(Xv)
            Yv = check_multilabel(Yv, n_rows=len(Xv), n_labels=Y.shape[1])
            Uv = rest[0] if rest and U is not None else None
            if U is not None and Uv is None:
                raise ValueError("eval_set needs covariates when fusion is enabled")

        self.n_labels_ = Y.shape[1]
        model = self.build(self.n_labels_)
        if self.ssl_steps > 0:
            if self.arch != "conv_transformer":
                raise ValueError("self-supervised adaptation applies to the transformer backbone")
            ssl_pretrain(model.backbone, X, SslConfig(steps=self.ssl_steps, batch_size=self.ssl_batch_size, seed=self.random_state))
        self.policy_ = self.policy(model.config.n_blocks)
        apply_freezing_policy(model, self.policy_)

        if U is not None:
            self.scaler_ = CovariateScaler().fit(U)
            U, Uv = self.scaler_.transform(U), self.scaler_.transform(Uv)
        cfg = TrainConfig(
            lr_backbone=self.lr_backbone,
            lr_head=self.lr_head,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
        )
        result = train_supervised(model, (X, Y, U), (Xv, Yv, Uv), cfg)
        self.model_ = result.model
        self.budget_: ParamBudget = result.budget
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        self.best_val_auroc_ = result.best_val_auroc
        self.n_trainable_params_ = result.budget.total_trainable
        return self

    # -- inference ----------------------------------------------------
    def _covariates(self, X, covariates):
        if self.fusion == "none":
            return None
        if covariates is None:
            raise ValueError(f"fusion={self.fusion!r} needs covariates")
        return self.scaler_.transform(check_covariates(covariates, len(X)))

    def decision_function(self, X, covariates=None) -> np.ndarray:
        X = check_waveforms(X)
        return predict_logits(self.model_, X, self._covariates(X, covariates)).double().numpy()

    def predict_proba(self, X, covariates=None) -> np.ndarray:
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X, covariates)))
        return np.clip(p, PROBA_EPS, 1.0 - PROBA_EPS)

    def predict(self, X, covariates=None, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X, covariates) >= threshold).astype(np.int64)

    @torch.no_grad()
    def transform(self, X, covariates=None) -> np.ndarray:
        """Pre-head representation of each record."""
        X = check_waveforms(X)
        U = self._covariates(X, covariates)
        dtype = next(self.model_.parameters()).dtype
        self.model_.eval()
        out = []
        for i in range(0, len(X), 256):
            xb = torch.as_tensor(np.asarray(X[i : i + 256]), dtype=dtype)
            ub = None if U is None else torch.as_tensor(U[i : i + 256], dtype=dtype)
            out.append(self.model_.represent(xb, ub))
        return torch.cat(out).double().numpy()


class BinarySuite(ClassifierMixin, BaseEstimator):
    """One single-logit network per label, trained independently; outputs are concatenated."""

    def __init__(self, estimator: EcgNetClassifier | None = None, random_state: int = 0):
        self.estimator = estimator
        self.random_state = random_state

    def _member(self, j: int) -> EcgNetClassifier:
        base = self.estimator if self.estimator is not None else EcgNetClassifier()
        return clone(base).set_params(random_state=endpoint_seed(self.random_state, j))

    def fit(self, X, Y, covariates=None, eval_set=None):
        Y = check_multilabel(Y)
        self.estimators_ = [None] * Y.shape[1]
        for j in range(Y.shape[1]):
            self.refit_endpoint(j, X, Y, covariates, eval_set)
        return self

    def refit_endpoint(self, j: int, X, Y, covariates=None, eval_set=None):
        Y = check_multilabel(Y)
        sub_eval = None
        if eval_set is not None:
            sub_eval = (eval_set[0], check_multilabel(eval_set[1])[:, [j]], *eval_set[2:])
        self.estimators_[j] = self._member(j).fit(X, Y[:, [j]], covariates=covariates, eval_set=sub_eval)
        return self

    def predict_proba(self, X, covariates=None) -> np.ndarray:
        return np.column_stack([est.predict_proba(X, covariates)[:, 0] for est in self.estimators_])

    def predict(self, X, covariates=None, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X, covariates) >= threshold).astype(np.int64)

    @property
    def per_model_trainable_(self) -> int:
        return self.estimators_[0].n_trainable_params_

    @property
    def n_trainable_params_(self) -> int:
        """Reported as the number of models times the single-model count."""
        return len(self.estimators_) * self.per_model_trainable_
