"""Versioned catalogue of the engineered ECG descriptors."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..data.types import LEAD_NAMES

CATEGORIES = ("timing_variability", "morphology", "spectral", "inter_lead")
AGGREGATIONS = ("mean", "std", "p5", "p95")
CATALOG_VERSION = "v1"
CATALOG_FILE = "catalog_v1.csv"

TIMING_LEADS = ("I", "II", "V5")
# (name, aggregation) measured from the RR series of each timing lead
TIMING_MEASURES = (
    ("rr", "mean"),
    ("rr", "std"),
    ("rr", "p5"),
    ("rr", "p95"),
    ("hr", "mean"),
    ("rmssd", "mean"),
    ("pnn50", "mean"),
    ("sdsd", "std"),
)
MORPHOLOGY_MEASURES = ("r_amp", "qrs_width", "t_amp", "st_level")
MORPHOLOGY_AGGREGATIONS = ("mean", "std")
BANDS = ((0.5, 4.0), (4.0, 15.0), (15.0, 40.0))
CORRELATION_PAIRS = (
    ("I", "II"),
    ("II", "III"),
    ("I", "aVF"),
    ("V1", "V2"),
    ("V2", "V3"),
    ("V3", "V4"),
    ("V4", "V5"),
    ("V5", "V6"),
    ("V1", "V6"),
)


@dataclass(frozen=True)
class FeatureDescriptor:
    id: str
    category: str
    lead: str
    aggregation: str


@dataclass(frozen=True)
class FeatureCatalog:
    features: tuple[FeatureDescriptor, ...]
    version: str = CATALOG_VERSION

    def __post_init__(self):
        ids = [f.id for f in self.features]
        if len(set(ids)) != len(ids):
            raise ValueError("feature ids must be unique")
        for f in self.features:
            if f.category not in CATEGORIES:
                raise ValueError(f"{f.id}: unknown category {f.category!r}")
            if f.aggregation not in AGGREGATIONS:
                raise ValueError(f"{f.id}: unknown aggregation {f.aggregation!r}")

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def ids(self) -> list[str]:
        return [f.id for f in self.features]

    def subset(self, ids) -> "FeatureCatalog":
        by_id = {f.id: f for f in self.features}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise KeyError(f"unknown feature ids: {missing}")
        return FeatureCatalog(tuple(by_id[i] for i in ids), self.version)


def build_default_catalog() -> FeatureCatalog:
    feats = []
    for lead in TIMING_LEADS:
        for name, agg in TIMING_MEASURES:
            feats.append(FeatureDescriptor(f"{name}_{agg}_{lead}", "timing_variability", lead, agg))
    for lead in LEAD_NAMES:
        for name in MORPHOLOGY_MEASURES:
            for agg in MORPHOLOGY_AGGREGATIONS:
                feats.append(FeatureDescriptor(f"{name}_{agg}_{lead}", "morphology", lead, agg))
    for lead in LEAD_NAMES:
        for lo, hi in BANDS:
            feats.append(FeatureDescriptor(f"relpow_{lo:g}_{hi:g}hz_{lead}", "spectral", lead, "mean"))
    for a, b in CORRELATION_PAIRS:
        feats.append(FeatureDescriptor(f"corr_{a}_{b}", "inter_lead", f"{a}+{b}", "mean"))
    feats.append(FeatureDescriptor("qrs_axis_deg", "inter_lead", "I+aVF", "mean"))
    return FeatureCatalog(tuple(feats))


def write_catalog(catalog: FeatureCatalog, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# feature catalog {catalog.version}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "category", "lead", "aggregation"])
        for f in catalog:
            w.writerow([f.id, f.category, f.lead, f.aggregation])


def _parse_catalog(text: str) -> FeatureCatalog:
    version = CATALOG_VERSION
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) >= 3 and parts[:2] == ["feature", "catalog"]:
                version = parts[2]
            continue
        lines.append(line)
    rows = list(csv.DictReader(io.StringIO("\n".join(lines))))
    return FeatureCatalog(tuple(FeatureDescriptor(r["id"], r["category"], r["lead"], r["aggregation"]) for r in rows), version)


def load_catalog(path: str | os.PathLike | None = None) -> FeatureCatalog:
    """Load a catalogue file; without a path, the shipped default (166 features)."""
    if path is None:
        text = resources.files(__package__).joinpath(CATALOG_FILE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return _parse_catalog(text)
