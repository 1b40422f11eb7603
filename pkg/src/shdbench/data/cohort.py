"""Cohort-level operations: validation, all-negative downsampling, prevalence and co-occurrence."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .manifest import CohortManifest
from .store import file_checksum, read_header
from .types import COVARIATE_NAMES, ENDPOINT_TITLES, ENDPOINTS, LABEL_COLUMNS, SPLITS


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    n_records: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.passed:
            return f"cohort OK ({self.n_records} records)"
        return "\n".join([f"{len(self.violations)} violation(s):"] + [f"  - {v}" for v in self.violations])


def validate_cohort(manifest: CohortManifest, store_path: str | Path | None = None) -> ValidationReport:
    """Check the manifest invariants; violations are collected, never raised."""
    f = manifest.frame
    report = ValidationReport(n_records=len(f))
    v = report.violations

    bad_split = sorted(set(f["split"]) - set(SPLITS))
    if bad_split:
        v.append(f"unknown split values: {bad_split}")
    dup_ids = f["record_id"][f["record_id"].duplicated()].unique()
    if len(dup_ids):
        v.append(f"duplicate record_id values: {list(dup_ids[:10])}")

    splits_per_patient = f.groupby("patient_id")["split"].nunique()
    for pid in splits_per_patient[splits_per_patient > 1].index:
        found = sorted(f.loc[f["patient_id"] == pid, "split"].unique())
        v.append(f"patient {pid} appears in several splits: {found}")

    for split in ("val", "test"):
        counts = f.loc[f["split"] == split, "patient_id"].value_counts()
        for pid, n in counts[counts > 1].items():
            v.append(f"patient {pid} has {n} records in {split} (at most one allowed)")

    labels = f[list(LABEL_COLUMNS)].to_numpy()
    if not np.isin(labels, (0, 1)).all():
        v.append("label columns contain values other than 0/1")
    cov = f[list(COVARIATE_NAMES)]
    if not all(pd.api.types.is_numeric_dtype(cov[c]) for c in COVARIATE_NAMES):
        v.append("covariate columns must be numeric")

    if store_path is not None:
        try:
            n_store = read_header(store_path)
        except (OSError, ValueError) as err:
            v.append(f"waveform store unreadable: {err}")
        else:
            rows = manifest.store_rows
            if manifest.is_identity_order() and n_store != len(f):
                v.append(f"store holds {n_store} records but manifest lists {len(f)}")
            elif rows.size and (rows.min() < 0 or rows.max() >= n_store):
                v.append("manifest store rows fall outside the waveform store")
            if manifest.store_checksum is not None and file_checksum(store_path) != manifest.store_checksum:
                v.append("waveform store checksum does not match the manifest")
    return report


@dataclass
class DownsampleResult:
    manifest: CohortManifest
    rho: float
    n_all_negative: int
    n_removed: int
    n_train_before: int
    n_train_after: int


def downsample_all_negative(manifest: CohortManifest, rho: float, seed: int) -> DownsampleResult:
    """Drop all-negative training records, keeping every record with a positive label.

    Exactly ``round((1 - rho) * A)`` of the ``A`` all-negative training
    records are removed, chosen by a seeded shuffle; val/test rows and
    the relative order of survivors are untouched.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"retention ratio must lie in (0, 1], got {rho}")
    split = manifest.frame["split"].to_numpy()
    labels = manifest.labels()
    all_neg = np.flatnonzero((split == "train") & (labels.sum(axis=1) == 0))
    a = len(all_neg)
    n_removed = round_half_up((1.0 - rho) * a)
    rng = np.random.default_rng(seed)
    order = rng.permutation(a)
    removed = all_neg[order[:n_removed]]
    keep = np.ones(len(manifest), dtype=bool)
    keep[removed] = False
    n_train = int((split == "train").sum())
    return DownsampleResult(
        manifest=manifest.subset(np.flatnonzero(keep)),
        rho=rho,
        n_all_negative=a,
        n_removed=int(n_removed),
        n_train_before=n_train,
        n_train_after=n_train - int(n_removed),
    )


@dataclass
class DownsampleConsistency:
    candidates: list[int]
    implied_train_sizes: dict[float, int]
    discrepancies: list[str]

    @property
    def unique_a(self) -> int | None:
        return self.candidates[0] if len(self.candidates) == 1 else None


def backsolve_all_negative_count(rows, max_a: int | None = None) -> DownsampleConsistency:
    """Find every all-negative count ``A`` consistent with reported downsampling rows.

    ``rows`` holds ``(rho, removed, train_size)`` triples; ``train_size`` may be None.
    """
    rows = list(rows)
    sizes = [r[2] for r in rows if r[2] is not None]
    upper = max_a if max_a is not None else max(sizes + [2 * max(r[1] for r in rows) + 10])
    candidates = [
        a for a in range(upper + 1) if all(round_half_up((1.0 - rho) * a) == removed for rho, removed, _ in rows)
    ]
    implied = {rho: size + removed for rho, removed, size in rows if size is not None}
    discrepancies = []
    distinct = sorted(set(implied.values()))
    if len(distinct) > 1:
        common = max(distinct, key=lambda s: sum(1 for v in implied.values() if v == s))
        for rho, total in implied.items():
            if total != common:
                discrepancies.append(f"rho={rho}: train size + removed = {total}, other rows imply {common}")
    if not candidates:
        discrepancies.append("no single all-negative count reproduces every removed count")
    return DownsampleConsistency(candidates, implied, discrepancies)


@dataclass
class CohortStats:
    prevalence: pd.DataFrame  # percent; rows = endpoints, columns = overall + splits
    counts: pd.DataFrame
    cooccurrence: pd.DataFrame
    n: dict[str, int]


def conditional_percent(joint: int, count_given: int) -> float:
    """P(other = 1 | given = 1) in percent; NaN when the conditioning endpoint has no positives."""
    return math.nan if count_given == 0 else 100.0 * joint / count_given


def cooccurrence_table(labels: np.ndarray) -> pd.DataFrame:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    counts = labels.sum(axis=0)
    joint = labels.T @ labels
    rows = []
    for i, j in itertools.combinations(range(len(ENDPOINTS)), 2):
        rows.append(
            {
                "endpoint_1": ENDPOINT_TITLES[i],
                "endpoint_2": ENDPOINT_TITLES[j],
                "count": int(joint[i, j]),
                "joint_prev": 100.0 * joint[i, j] / n if n else math.nan,
                "p_t2_given_t1": conditional_percent(int(joint[i, j]), int(counts[i])),
                "p_t1_given_t2": conditional_percent(int(joint[i, j]), int(counts[j])),
                "count_t1": int(counts[i]),
                "count_t2": int(counts[j]),
            }
        )
    table = pd.DataFrame(rows)
    # stable sort keeps endpoint order among equal joint counts
    return table.sort_values("count", ascending=False, kind="mergesort").reset_index(drop=True)


def cohort_stats(manifest: CohortManifest) -> CohortStats:
    labels = manifest.labels()
    split = manifest.frame["split"].to_numpy()
    groups = {"overall": np.ones(len(labels), dtype=bool)} | {s: split == s for s in SPLITS}
    prev, cnt, n = {}, {}, {}
    for name, mask in groups.items():
        sub = labels[mask]
        n[name] = int(mask.sum())
        cnt[name] = sub.sum(axis=0)
        prev[name] = 100.0 * sub.mean(axis=0) if len(sub) else np.full(len(ENDPOINTS), np.nan)
    index = pd.Index(ENDPOINT_TITLES, name="endpoint")
    return CohortStats(
        prevalence=pd.DataFrame(prev, index=index),
        counts=pd.DataFrame(cnt, index=index),
        cooccurrence=cooccurrence_table(labels),
        n=n,
    )
