"""Supervised multi-label training with early stopping on validation macro AUROC."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..eval.metrics import macro_auroc
from ..models.policy import ParamBudget, count_trainable, parameter_group

logger = logging.getLogger(__name__)

CACHE_LIMIT_BYTES = 1 << 30
HEAD_GROUPS = ("head", "tabular", "fusion", "lora", "other")


class NoTrainableParametersError(RuntimeError):
    pass


class DivergenceError(FloatingPointError):
    """Raised on a non-finite loss; ``last_good_state`` holds the best weights so far."""

    def __init__(self, message: str, last_good_state: dict | None):
        super().__init__(message)
        self.last_good_state = last_good_state


@dataclass(frozen=True)
class TrainConfig:
    lr_backbone: float = 1e-4
    lr_head: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    weight_decay: float = 0.0
    eval_batch_size: int = 256
    cache_frozen_prefix: bool = True

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr_backbone <= 0 or self.lr_head <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainResult:
    model: nn.Module
    budget: ParamBudget
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auroc: float = math.nan


def bce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Unweighted binary cross-entropy averaged over records and labels."""
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="mean")


def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def _entry(model: nn.Module, cache: bool, n_rows: int) -> int:
    """Backbone stage at which training enters; earlier stages are precomputed."""
    if not cache or not hasattr(model, "frozen_prefix"):
        return 0
    start = model.frozen_prefix()
    if start == 0:
        return 0
    cfg = model.config
    width = cfg.conv_channels[-1] if start == 1 else cfg.d_model
    if n_rows * cfg.n_tokens * width * 4 > CACHE_LIMIT_BYTES:
        return 0
    return start


def _batch(X, idx, dtype) -> torch.Tensor:
    if isinstance(X, torch.Tensor):
        return X[torch.as_tensor(idx)]
    return torch.as_tensor(np.asarray(X[np.asarray(idx)]), dtype=dtype)


@torch.no_grad()
def _precompute(model, X, start: int, batch_size: int) -> torch.Tensor:
    dtype = _dtype(model)
    was_training = model.training
    model.eval()
    parts = [model.backbone.run(_batch(X, np.arange(i, min(i + batch_size, len(X))), dtype), 0, start) for i in range(0, len(X), batch_size)]
    model.train(was_training)
    return torch.cat(parts)


def _forward(model, xb, start: int, ub):
    if start:
        return model.forward_from(xb, start, ub)
    if getattr(model, "uses_covariates", False):
        return model(xb, ub)
    return model(xb)


@torch.no_grad()
def predict_logits(model: nn.Module, X, U=None, *, start: int = 0, batch_size: int = 256) -> torch.Tensor:
    dtype = _dtype(model)
    model.eval()
    out = []
    for i in range(0, len(X), batch_size):
        idx = np.arange(i, min(i + batch_size, len(X)))
        ub = None if U is None else torch.as_tensor(np.asarray(U)[idx], dtype=dtype)
        out.append(_forward(model, _batch(X, idx, dtype), start, ub))
    return torch.cat(out)


def _param_groups(model: nn.Module, cfg: TrainConfig):
    backbone, head = [], []
    for name, p in model.named_parameters():
        if p.requires_grad:
            (head if parameter_group(name) in HEAD_GROUPS else backbone).append(p)
    groups = []
    if backbone:
        groups.append({"params": backbone, "lr": cfg.lr_backbone})
    if head:
        groups.append({"params": head, "lr": cfg.lr_head})
    return groups


def train_supervised(model: nn.Module, train, val, config: TrainConfig) -> TrainResult:
    """Fit ``model`` on ``train = (X, Y[, U])`` and early-stop on ``val``.

    Adam with separate backbone and head learning rates and a per-step
    cosine decay. The returned model carries the weights of the epoch with
    the best validation macro AUROC.
    """
    budget = count_trainable(model)
    if budget.total_trainable == 0:
        raise NoTrainableParametersError("no trainable parameters: every group is frozen")
    X, Y, U = (tuple(train) + (None,))[:3]
    Xv, Yv, Uv = (tuple(val) + (None,))[:3]
    Y = np.asarray(Y, dtype=np.float64)
    Yv = np.asarray(Yv)
    dtype = _dtype(model)

    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    start = _entry(model, config.cache_frozen_prefix, len(X) + len(Xv))
    if start:
        X = _precompute(model, X, start, config.eval_batch_size)
        Xv = _precompute(model, Xv, start, config.eval_batch_size)
    Yt = torch.as_tensor(Y, dtype=dtype)
    Ut = None if U is None else torch.as_tensor(np.asarray(U), dtype=dtype)

    opt = torch.optim.Adam(_param_groups(model, config), weight_decay=config.weight_decay)
    steps_per_epoch = math.ceil(len(X) / config.batch_size)
    total = steps_per_epoch * config.max_epochs
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda t: 0.5 * (1.0 + math.cos(math.pi * min(t, total) / total)))

    result = TrainResult(model=model, budget=budget)
    best_state, since_best = None, 0
    for epoch in range(config.max_epochs):
        model.train()
        perm = order_rng.permutation(len(X))
        running = 0.0
        for i in range(0, len(X), config.batch_size):
            idx = perm[i : i + config.batch_size]
            ub = None if Ut is None else Ut[torch.as_tensor(idx)]
            loss = bce_loss(_forward(model, _batch(X, idx, dtype), start, ub), Yt[torch.as_tensor(idx)])
            if not torch.isfinite(loss):
                if best_state is not None:
                    model.load_state_dict(best_state)
                raise DivergenceError(f"non-finite loss in epoch {epoch}", best_state)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sched.step()
            running += loss.item() * len(idx)
        probs = torch.sigmoid(predict_logits(model, Xv, Uv, start=start, batch_size=config.eval_batch_size)).numpy()
        val_auc = macro_auroc(probs, Yv)
        result.log.append({"epoch": epoch, "train_loss": running / len(X), "val_macro_auroc": val_auc})
        logger.info("epoch %d loss %.4f val macro AUROC %.4f", epoch, running / len(X), val_auc)
        improved = best_state is None or (not math.isnan(val_auc) and (math.isnan(result.best_val_auroc) or val_auc > result.best_val_auroc))
        if improved:
            best_state = copy.deepcopy(model.state_dict())
            result.best_epoch, result.best_val_auroc, since_best = epoch, val_auc, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return result
