"""Prediction containers, macro reports and threshold sweeps."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..data.types import ENDPOINT_TITLES
from .metrics import auprc, auroc, threshold_metrics

REPORT_COLUMNS = ("endpoint", "prevalence", "auroc", "auprc", "acc", "f1")
MACRO_ROW = "Macro average"


class AlignmentError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass
class PredictionSet:
    """Probabilities for one model, row-aligned with a manifest."""

    probabilities: np.ndarray
    record_ids: np.ndarray | None = None
    model_id: str = ""
    config_hash: str = ""

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"probabilities must be 2-D, got shape {p.shape}")
        if not np.isfinite(p).all() or (p <= 0).any() or (p >= 1).any():
            raise ValueError("probabilities must be finite and strictly inside (0, 1)")
        self.probabilities = p
        if self.record_ids is not None:
            self.record_ids = np.asarray(self.record_ids).astype(str)
            if len(self.record_ids) != len(p):
                raise AlignmentError("record ids and probability rows differ in length")

    def __len__(self):
        return len(self.probabilities)

    def align_to(self, record_ids) -> "PredictionSet":
        """Reorder rows to ``record_ids``; every id must be present."""
        if self.record_ids is None:
            raise AlignmentError("prediction set carries no record ids")
        pos = pd.Index(self.record_ids).get_indexer(np.asarray(record_ids).astype(str))
        if (pos < 0).any():
            raise AlignmentError(f"{int((pos < 0).sum())} records have no prediction")
        return PredictionSet(self.probabilities[pos], self.record_ids[pos], self.model_id, self.config_hash)


@dataclass
class MetricsReport:
    per_label: pd.DataFrame  # indexed by endpoint, REPORT_COLUMNS[1:]
    macro: dict[str, float]
    tau: float
    excluded: list[tuple[str, str]] = field(default_factory=list)

    def table(self) -> pd.DataFrame:
        rows = self.per_label.reset_index()
        macro = {"endpoint": MACRO_ROW, "prevalence": math.nan, **self.macro}
        return pd.concat([rows, pd.DataFrame([macro])], ignore_index=True)[list(REPORT_COLUMNS)]

    def to_text(self, digits: int = 4) -> str:
        t = self.table()
        cells = [["Endpoint", "Test Prev. (%)", "AUROC", "AUPRC", "Acc", "F1"]]
        for _, r in t.iterrows():
            prev = "---" if math.isnan(r["prevalence"]) else f"{r['prevalence']:.2f}"
            nums = ["n/a" if math.isnan(r[c]) else f"{r[c]:.{digits}f}" for c in REPORT_COLUMNS[2:]]
            cells.append([r["endpoint"], prev, *nums])
        widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in cells]
        rule = "-" * len(lines[0])
        out = [lines[0], rule, *lines[1:-1], rule, lines[-1], f"threshold tau = {self.tau:g}"]
        out += [f"excluded {name}: {why}" for name, why in self.excluded]
        return "\n".join(out) + "\n"

    def write(self, stem: str | os.PathLike) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` and ``<stem>.txt``."""
        stem = Path(stem)
        csv_path, txt_path = stem.with_suffix(".csv"), stem.with_suffix(".txt")
        self.table().to_csv(csv_path, index=False, float_format="%.6f")
        txt_path.write_text(self.to_text(), encoding="utf-8")
        return csv_path, txt_path


def _as_matrix(pred) -> np.ndarray:
    if isinstance(pred, PredictionSet):
        return pred.probabilities
    return np.asarray(pred, dtype=np.float64)


def macro_report(pred, labels, tau: float = 0.5, *, names=None, strict: bool = False) -> MetricsReport:
    """Per-label metrics and their arithmetic macro means.

    AUROC/AUPRC are averaged over labels where both are defined; the others
    are listed in ``excluded``. With ``strict`` an exclusion is an error.
    """
    p = _as_matrix(pred)
    y = np.asarray(labels)
    if y.ndim == 1:
        y = y[:, None]
    if p.shape != y.shape:
        raise AlignmentError(f"predictions {p.shape} and labels {y.shape} are not aligned")
    names = list(names) if names is not None else list(ENDPOINT_TITLES[: y.shape[1]])
    if len(names) != y.shape[1]:
        raise ValueError("one name per label column is required")

    rows, excluded = [], []
    for j, name in enumerate(names):
        tm = threshold_metrics(p[:, j], y[:, j], tau)
        ra, rp = auroc(p[:, j], y[:, j]), auprc(p[:, j], y[:, j])
        if math.isnan(ra) or math.isnan(rp):
            n_pos = int(y[:, j].sum())
            why = "no positive samples" if n_pos == 0 else "no negative samples"
            if strict:
                raise UndefinedMetricError(f"{name}: {why}")
            excluded.append((name, why))
        rows.append({"endpoint": name, "prevalence": 100.0 * y[:, j].mean(), "auroc": ra, "auprc": rp, "acc": tm.acc, "f1": tm.f1})

    per_label = pd.DataFrame(rows).set_index("endpoint")
    included = per_label.drop(index=[n for n, _ in excluded])
    macro = {c: float(included[c].mean()) if len(included) else math.nan for c in ("auroc", "auprc")}
    macro |= {c: float(per_label[c].mean()) for c in ("acc", "f1")}
    return MetricsReport(per_label=per_label, macro=macro, tau=tau, excluded=excluded)


@dataclass
class SweepResult:
    curves: pd.DataFrame  # endpoint, tau, f1, acc
    best: pd.DataFrame  # per endpoint: tau and f1 at the maximum F1


def threshold_sweep(pred, labels, grid, *, names=None) -> SweepResult:
    grid = np.asarray(list(grid), dtype=np.float64)
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    if ((grid <= 0) | (grid >= 1)).any():
        raise ValueError("thresholds must lie in (0, 1)")
    p, y = _as_matrix(pred), np.asarray(labels)
    if p.shape != y.shape:
        raise AlignmentError(f"predictions {p.shape} and labels {y.shape} are not aligned")
    names = list(names) if names is not None else list(ENDPOINT_TITLES[: y.shape[1]])
    rows = []
    for j, name in enumerate(names):
        for tau in grid:
            tm = threshold_metrics(p[:, j], y[:, j], float(tau))
            rows.append({"endpoint": name, "tau": float(tau), "f1": tm.f1, "acc": tm.acc})
    curves = pd.DataFrame(rows)
    # first maximiser in grid order
    best = curves.loc[curves.groupby("endpoint", sort=False)["f1"].idxmax(), ["endpoint", "tau", "f1"]].reset_index(drop=True)
    return SweepResult(curves, best)
