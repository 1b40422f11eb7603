"""Declarative experiment runner: YAML spec in, results rows out."""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import yaml

from ..data.cohort import downsample_all_negative
from ..data.manifest import Cohort, open_cohort
from ..data.types import ENDPOINTS
from ..data.synthetic import SyntheticConfig, generate_synthetic_cohort
from ..eval.report import macro_report
from ..features.boosting import BoostedTreeOvR
from ..features.extract import EcgFeatureExtractor
from ..models.config import MoFMConfig, resnet_config, transformer_config
from ..models.mofm import MixtureOfBackbones
from ..models.policy import apply_mofm_policy
from .estimators import BinarySuite, EcgNetClassifier
from .supervised import TrainConfig, predict_logits, train_supervised

logger = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "variant",
    "seed",
    "b",
    "conv_trainable",
    "lora_rank",
    "fusion",
    "rho",
    "trainable_params",
    "auroc",
    "auprc",
    "acc",
    "f1",
    "wall_time_s",
    "config_hash",
)

# variant -> allowed variant parameters and their defaults (None: resolved from the model)
VARIANTS: dict[str, dict] = {
    "baselineA": {},
    "baselineB": {},
    "probe": {},
    "partial_ft": {"b": None},
    "full_transformer_ft": {},
    "full_model_ft": {},
    "lora": {"rank": 16},
    "fusion": {"mode": "gated", "b": None},
    "mofm": {"mode": "logit_moe", "experts": ["conv_transformer", "resnet1d"], "d_c": 64},
    "binary_suite": {"b": None},
    "downsample": {"rho": 0.5, "b": None},
}
TOP_LEVEL_KEYS = {"name", "variant", "dataset", "seeds", "params", "grid", "model", "ssl", "gbdt", "tau", "deterministic"}
MODEL_KEYS = {
    "preset",
    "max_epochs",
    "batch_size",
    "lr_backbone",
    "lr_head",
    "patience",
    "pretrained",
    "config_overrides",
    "dtype",
}
SSL_KEYS = {"steps", "batch_size"}
GBDT_KEYS = set(BoostedTreeOvR().get_params()) - {"random_state"}
SYNTHETIC_KEYS = {"n", "seed", "signal_strength", "split_sizes", "noise_mv", "repeat_fraction"}


class SpecError(ValueError):
    """Invalid experiment specification (usage/config error)."""


def _reject_unknown(block: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise SpecError(f"unknown key(s) {unknown} in {where}; valid keys: {sorted(allowed)}")


@dataclass
class ExperimentSpec:
    variant: str
    dataset: dict
    seeds: list[int] = field(default_factory=lambda: [0])
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    ssl: dict = field(default_factory=dict)
    gbdt: dict = field(default_factory=dict)
    tau: float = 0.5
    deterministic: bool = True
    name: str = ""

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        if not isinstance(raw, dict):
            raise SpecError("experiment spec must be a mapping")
        _reject_unknown(raw, TOP_LEVEL_KEYS, "experiment spec")
        variant = raw.get("variant")
        if variant not in VARIANTS:
            raise SpecError(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
        if "dataset" not in raw:
            raise SpecError("experiment spec needs a 'dataset' block")
        spec = cls(
            variant=variant,
            dataset=dict(raw["dataset"]),
            seeds=[int(s) for s in raw.get("seeds", [0])],
            params=dict(raw.get("params") or {}),
            grid={k: list(v) for k, v in (raw.get("grid") or {}).items()},
            model=dict(raw.get("model") or {}),
            ssl=dict(raw.get("ssl") or {}),
            gbdt=dict(raw.get("gbdt") or {}),
            tau=float(raw.get("tau", 0.5)),
            deterministic=bool(raw.get("deterministic", True)),
            name=str(raw.get("name", "")),
        )
        spec.validate()
        return spec

    @classmethod
    def from_yaml(cls, path: str | os.PathLike) -> "ExperimentSpec":
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as err:
            raise SpecError(f"{path}: {err}") from err
        return cls.from_dict(raw)

    def validate(self) -> None:
        allowed = set(VARIANTS[self.variant])
        _reject_unknown(self.params, allowed, f"params of {self.variant}")
        _reject_unknown(self.grid, allowed, f"grid of {self.variant}")
        _reject_unknown(self.model, MODEL_KEYS, "model")
        _reject_unknown(self.ssl, SSL_KEYS, "ssl")
        _reject_unknown(self.gbdt, GBDT_KEYS, "gbdt")
        ds_kinds = {"synthetic", "path"}
        _reject_unknown(self.dataset, ds_kinds, "dataset")
        if len(self.dataset) != 1:
            raise SpecError("dataset needs exactly one of 'synthetic' or 'path'")
        if "synthetic" in self.dataset:
            _reject_unknown(self.dataset["synthetic"] or {}, SYNTHETIC_KEYS, "dataset.synthetic")
        if not self.seeds:
            raise SpecError("seeds must not be empty")
        if not 0.0 < self.tau < 1.0:
            raise SpecError("tau must lie in (0, 1)")

    def points(self) -> list[dict]:
        """Variant parameter settings: defaults, then ``params``, then each grid combination."""
        base = dict(VARIANTS[self.variant]) | self.params
        if not self.grid:
            return [base]
        keys = list(self.grid)
        return [base | dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dataset": self.dataset,
            "seeds": self.seeds,
            "params": self.params,
            "grid": self.grid,
            "model": self.model,
            "ssl": self.ssl,
            "gbdt": self.gbdt,
            "tau": self.tau,
        }


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def load_dataset(spec: ExperimentSpec) -> tuple[Cohort, int | None]:
    if "path" in spec.dataset:
        return open_cohort(spec.dataset["path"]), None
    cfg = dict(spec.dataset["synthetic"] or {})
    if "split_sizes" in cfg:
        cfg["split_sizes"] = tuple(cfg["split_sizes"])
        cfg.setdefault("n", sum(cfg["split_sizes"]))
    syn = generate_synthetic_cohort(SyntheticConfig(**cfg))
    return Cohort(syn.manifest, syn.store), cfg.get("seed", 0)


@dataclass
class ExperimentResult:
    rows: pd.DataFrame
    details: list[dict]
    predictions: dict[str, pd.DataFrame] = field(default_factory=dict)


def _net(spec: ExperimentSpec, seed: int, **kw) -> EcgNetClassifier:
    params = {k: v for k, v in spec.model.items()}
    params.setdefault("preset", "mini")
    return EcgNetClassifier(random_state=seed, ssl_steps=int(spec.ssl.get("steps", 0)), ssl_batch_size=int(spec.ssl.get("batch_size", 16)), **params, **kw)


def _n_blocks(spec: ExperimentSpec) -> int:
    preset = spec.model.get("preset", "mini")
    return transformer_config(preset, **(spec.model.get("config_overrides") or {})).n_blocks


def _run_point(spec: ExperimentSpec, cohort: Cohort, point: dict, seed: int) -> tuple[dict, dict]:
    variant = spec.variant
    L = _n_blocks(spec)
    default_b = L // 2
    row = {"b": "", "conv_trainable": "", "lora_rank": "", "fusion": "none", "rho": ""}
    details: dict = {"init_seed": seed, "order_seed": seed}

    manifest = cohort.manifest
    if variant == "downsample":
        ds = downsample_all_negative(manifest, float(point["rho"]), seed)
        manifest = ds.manifest
        row["rho"] = float(point["rho"])
        details |= {"n_all_negative": ds.n_all_negative, "n_removed": ds.n_removed, "n_train_after": ds.n_train_after}
    parts = {}
    for s in ("train", "val", "test"):
        sub = manifest.split(s)
        parts[s] = (sub.waveforms(cohort.store), sub.labels(), sub.covariates())
    (Xtr, Ytr, Utr), (Xva, Yva, Uva), (Xte, Yte, Ute) = parts["train"], parts["val"], parts["test"]

    if variant == "baselineA":
        extractor = EcgFeatureExtractor()
        Ftr, Fva, Fte = (extractor.fit_transform(X) for X in (Xtr, Xva, Xte))
        model = BoostedTreeOvR(**spec.gbdt, random_state=seed).fit(Ftr, Ytr)
        probs = model.predict_proba(Fte)
        trainable = model.n_parameters_
    elif variant == "mofm":
        probs, trainable = _run_mofm(spec, point, seed, (Xtr, Ytr), (Xva, Yva), Xte)
        row["b"] = default_b
    else:
        if variant == "baselineB":
            est = _net(spec, seed, arch="resnet1d")
        elif variant == "probe":
            est = _net(spec, seed, b=0)
        elif variant in ("partial_ft", "downsample"):
            est = _net(spec, seed, b=default_b if point.get("b") is None else int(point["b"]))
        elif variant == "full_transformer_ft":
            est = _net(spec, seed, b=L)
        elif variant == "full_model_ft":
            est = _net(spec, seed, b=L, conv_trainable=True)
        elif variant == "lora":
            est = _net(spec, seed, b=0, lora_rank=int(point["rank"]))
        elif variant == "fusion":
            est = _net(spec, seed, b=default_b if point.get("b") is None else int(point["b"]), fusion=point["mode"])
        elif variant == "binary_suite":
            est = BinarySuite(_net(spec, seed, b=default_b if point.get("b") is None else int(point["b"])), random_state=seed)
        else:  # pragma: no cover - guarded by spec validation
            raise SpecError(f"unhandled variant {variant}")
        needs_u = getattr(est, "fusion", "none") != "none"
        if needs_u:
            est.fit(Xtr, Ytr, covariates=Utr, eval_set=(Xva, Yva, Uva))
            probs = est.predict_proba(Xte, covariates=Ute)
        else:
            est.fit(Xtr, Ytr, eval_set=(Xva, Yva))
            probs = est.predict_proba(Xte)
        trainable = est.n_trainable_params_
        member = est.estimators_[0] if isinstance(est, BinarySuite) else est
        if member.arch == "conv_transformer":
            pol = member.policy_
            row |= {"b": pol.b, "conv_trainable": pol.conv_trainable, "lora_rank": pol.lora.rank if pol.lora else ""}
        row["fusion"] = member.fusion
        if isinstance(est, BinarySuite):
            details["per_model_trainable"] = est.per_model_trainable_

    report = macro_report(probs, Yte, spec.tau)
    row |= {"trainable_params": int(trainable), **{k: report.macro[k] for k in ("auroc", "auprc", "acc", "f1")}}
    details["excluded"] = report.excluded
    details["_predictions"] = prediction_frame(manifest.split("test").record_ids, probs)
    return row, details


def prediction_frame(record_ids, probs) -> pd.DataFrame:
    """Test-split probabilities keyed by record id, one column per endpoint."""
    frame = pd.DataFrame(np.asarray(probs, dtype=np.float64), columns=list(ENDPOINTS[: np.asarray(probs).shape[1]]))
    frame.insert(0, "record_id", np.asarray(record_ids).astype(str))
    return frame


def _run_mofm(spec, point, seed, train, val, Xte):
    preset = spec.model.get("preset", "mini")
    experts = tuple(transformer_config(preset) if fam == "conv_transformer" else resnet_config(preset) for fam in point["experts"])
    L = experts[0].n_blocks if experts[0].family == "conv_transformer" else 0
    torch.manual_seed(seed)
    model = MixtureOfBackbones(MoFMConfig(experts, mode=point["mode"], d_c=int(point["d_c"])))
    budget = apply_mofm_policy(model, [L // 2 if c.family == "conv_transformer" else None for c in experts])
    cfg = TrainConfig(
        max_epochs=int(spec.model.get("max_epochs", 20)),
        batch_size=int(spec.model.get("batch_size", 16)),
        patience=int(spec.model.get("patience", 5)),
        seed=seed,
    )
    train_supervised(model, train, val, cfg)
    probs = torch.sigmoid(predict_logits(model, Xte).double()).numpy()
    return np.clip(probs, 1e-7, 1 - 1e-7), budget.total_trainable


def _label(variant: str, point: dict) -> str:
    shown = {k: v for k, v in point.items() if k not in ("experts", "d_c") and v is not None}
    if not shown:
        return variant
    return f"{variant}(" + ",".join(f"{k}={v}" for k, v in sorted(shown.items())) + ")"


def append_results(rows: pd.DataFrame, path: str | os.PathLike) -> Path:
    """Append rows to the results CSV, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    rows = rows[list(RESULT_COLUMNS)]
    with open(path, "a", newline="", encoding="utf-8") as fh:
        rows.to_csv(fh, header=new, index=False, float_format="%.6f", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    return path


def run_experiment(spec: ExperimentSpec, out_dir: str | os.PathLike | None = None, *, cohort: Cohort | None = None) -> ExperimentResult:
    """Run every (variant point, seed) of ``spec``; add one mean row per point.

    With ``out_dir``, rows are appended to ``results.csv`` and the per-row
    details are written to ``experiment_log.json``.
    """
    if spec.deterministic:
        torch.use_deterministic_algorithms(True)
    data_seed = None
    if cohort is None:
        cohort, data_seed = load_dataset(spec)
    rows, details, predictions = [], [], {}
    for point in spec.points():
        label = _label(spec.variant, point)
        chash = config_hash(spec.to_dict() | {"point": point})
        point_rows = []
        for seed in spec.seeds:
            t0 = time.perf_counter()
            row, info = _run_point(spec, cohort, copy.deepcopy(point), seed)
            predictions[f"{label}_seed{seed}"] = info.pop("_predictions")
            wall = 0.0 if spec.deterministic else round(time.perf_counter() - t0, 3)
            row = {"variant": label, "seed": seed, **row, "wall_time_s": wall, "config_hash": chash}
            point_rows.append(row)
            details.append({"variant": label, "seed": seed, "data_seed": data_seed, **info})
            logger.info("%s seed %d: macro AUROC %.4f", label, seed, row["auroc"])
        rows += point_rows
        if len(point_rows) > 1:
            agg = dict(point_rows[0], seed="mean")
            for k in ("auroc", "auprc", "acc", "f1", "wall_time_s"):
                agg[k] = float(np.mean([r[k] for r in point_rows]))
            agg["trainable_params"] = int(round(np.mean([r["trainable_params"] for r in point_rows])))
            rows.append(agg)
    frame = pd.DataFrame(rows, columns=list(RESULT_COLUMNS))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        append_results(frame, out / "results.csv")
        pred_dir = out / "predictions"
        pred_dir.mkdir(exist_ok=True)
        for name, pred in predictions.items():
            safe = "".join(c if c.isalnum() or c in "-_=." else "_" for c in name)
            pred.to_csv(pred_dir / f"{safe}.csv", index=False, float_format="%.17g", lineterminator="\n")
        (out / "experiment_log.json").write_text(json.dumps(details, indent=2, default=str) + "\n", encoding="utf-8")
    return ExperimentResult(frame, details, predictions)
