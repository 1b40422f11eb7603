"""Batch figures. Every image is written next to a CSV holding exactly the plotted numbers."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .data.types import ENDPOINT_TITLES  # noqa: E402

PLOT_KINDS = ("perf_efficiency", "topk_curve", "embedding")
ERROR_COLORS = {"TN": "#c8c8c8", "TP": "#6b6b6b", "FP": "#d4a017", "FN": "#c0392b"}
SPLIT_COLORS = {"train": "#1f77b4", "val": "#2ca02c", "test": "#ff7f0e"}
DPI = 100


class NothingToPlotError(ValueError):
    pass


def _require_rows(frame: pd.DataFrame, what: str) -> pd.DataFrame:
    if frame is None or len(frame) == 0:
        raise NothingToPlotError(f"nothing to plot: no {what}")
    return frame


# -- sidecar data -----------------------------------------------------------
def perf_efficiency_data(results: pd.DataFrame) -> pd.DataFrame:
    """One point per per-seed results row; aggregate ``mean`` rows are left out."""
    r = results[results["seed"].astype(str) != "mean"]
    data = pd.DataFrame(
        {
            "variant": r["variant"].astype(str).to_numpy(),
            "seed": r["seed"].astype(str).to_numpy(),
            "trainable_params": pd.to_numeric(r["trainable_params"]).to_numpy(np.int64),
            "auroc": pd.to_numeric(r["auroc"]).to_numpy(np.float64),
            "auprc": pd.to_numeric(r["auprc"]).to_numpy(np.float64),
        }
    )
    return _require_rows(data, "results rows")


def topk_data(curve: pd.DataFrame) -> pd.DataFrame:
    data = pd.DataFrame({"k": pd.to_numeric(curve["k"]).astype(np.int64), "val_macro_auroc": pd.to_numeric(curve["val_macro_auroc"])})
    return _require_rows(data.sort_values("k", kind="mergesort").reset_index(drop=True), "top-k points")


def error_type(prob, label, tau: float = 0.5) -> np.ndarray:
    """TP/TN/FP/FN per entry at threshold ``tau``."""
    pred = np.asarray(prob) >= tau
    y = np.asarray(label).astype(bool)
    out = np.where(pred, np.where(y, "TP", "FP"), np.where(y, "FN", "TN"))
    return out.astype(object)


def embedding_data(coords, splits=None, record_ids=None, probabilities=None, labels=None, tau: float = 0.5, names=None) -> pd.DataFrame:
    """Scatter table: coordinates, split, and one error-type column per endpoint when predictions are given."""
    coords = np.asarray(coords, dtype=np.float64)
    _require_rows(pd.DataFrame(coords), "embedding points")
    n = len(coords)
    data = pd.DataFrame(
        {
            "record_id": np.asarray(record_ids).astype(str) if record_ids is not None else np.arange(n).astype(str),
            "split": np.asarray(splits).astype(str) if splits is not None else np.full(n, "test"),
            "x": coords[:, 0],
            "y": coords[:, 1],
        }
    )
    if (probabilities is None) != (labels is None):
        raise ValueError("error colouring needs both probabilities and labels")
    if probabilities is not None:
        p, y = np.asarray(probabilities), np.asarray(labels)
        if p.shape != y.shape or len(p) != n:
            raise ValueError("probabilities, labels and coordinates must be row-aligned")
        names = list(names) if names is not None else list(ENDPOINT_TITLES[: p.shape[1]])
        for j, name in enumerate(names):
            data[f"err:{name}"] = error_type(p[:, j], y[:, j], tau)
    return data


# -- rendering from sidecar data --------------------------------------------
def _render_perf(data: pd.DataFrame, fig):
    axes = fig.subplots(1, 2)
    for ax, metric, title in zip(axes, ("auroc", "auprc"), ("Macro AUROC", "Macro AUPRC")):
        for variant, grp in data.groupby("variant", sort=True):
            ax.scatter(grp["trainable_params"], grp[metric], label=variant, s=28)
        ax.set_xscale("log")
        ax.set_xlabel("Trainable parameters (log scale)")
        ax.set_ylabel(title)
        ax.grid(True, alpha=0.3)
    axes[1].legend(fontsize=7, loc="best")


def _render_topk(data: pd.DataFrame, fig):
    ax = fig.subplots()
    ax.plot(data["k"], data["val_macro_auroc"], marker="o")
    ax.set_xlabel("Top-k features")
    ax.set_ylabel("Validation macro AUROC")
    ax.grid(True, alpha=0.3)


def _render_embedding(data: pd.DataFrame, fig):
    err_cols = [c for c in data.columns if c.startswith("err:")]
    if not err_cols:
        ax = fig.subplots()
        for split in sorted(data["split"].unique(), key=lambda s: (s not in SPLIT_COLORS, s)):
            grp = data[data["split"] == split]
            ax.scatter(grp["x"], grp["y"], s=6, c=SPLIT_COLORS.get(split, "#7f7f7f"), label=split)
        ax.legend(fontsize=7)
        ax.set_xticks([])
        ax.set_yticks([])
        return
    ncols = 3 if len(err_cols) > 2 else len(err_cols)
    nrows = -(-len(err_cols) // ncols)
    axes = np.atleast_1d(fig.subplots(nrows, ncols)).ravel()
    for ax, col in zip(axes, err_cols):
        # correct predictions first so errors are drawn on top
        for kind in ("TN", "TP", "FP", "FN"):
            grp = data[data[col] == kind]
            ax.scatter(grp["x"], grp["y"], s=5 if kind in ("TN", "TP") else 9, c=ERROR_COLORS[kind], label=kind)
        ax.set_title(col[4:], fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    for ax in axes[len(err_cols) :]:
        ax.set_axis_off()
    axes[0].legend(fontsize=6, loc="best")


_RENDER = {"perf_efficiency": (_render_perf, (10, 4)), "topk_curve": (_render_topk, (5, 4)), "embedding": (_render_embedding, (10, 6))}


def render(kind: str, data: pd.DataFrame, image_path: str | os.PathLike) -> Path:
    """Draw ``kind`` from its sidecar table; output is byte-stable for equal input."""
    if kind not in _RENDER:
        raise ValueError(f"unknown plot kind {kind!r}; valid kinds: {', '.join(PLOT_KINDS)}")
    _require_rows(data, "rows")
    draw, size = _RENDER[kind]
    with plt.rc_context({"svg.hashsalt": "shdbench", "path.simplify": True}):
        fig = plt.figure(figsize=size, dpi=DPI)
        try:
            draw(data, fig)
            fig.tight_layout()
            image_path = Path(image_path)
            fig.savefig(image_path, dpi=DPI, metadata={"Software": None})
        finally:
            plt.close(fig)
    return image_path


def emit(kind: str, data: pd.DataFrame, stem: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (the plotted numbers) and ``<stem>.png`` rendered from that CSV."""
    stem = Path(stem)
    csv_path = stem.with_suffix(".csv")
    data.to_csv(csv_path, index=False, lineterminator="\n")
    png = render(kind, read_sidecar(csv_path), stem.with_suffix(".png"))
    return png, csv_path


def read_sidecar(path: str | os.PathLike) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"record_id": str, "split": str, "variant": str, "seed": str}, keep_default_na=False, encoding="utf-8", float_precision="round_trip")
