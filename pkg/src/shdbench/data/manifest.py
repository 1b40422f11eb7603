"""Cohort manifest: record metadata rows paired with a waveform store."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .store import RecordArray, read_waveform_store
from .types import COVARIATE_NAMES, LABEL_COLUMNS, SPLITS, DataFormatError

ID_COLUMNS = ("record_id", "patient_id", "split")
MANIFEST_COLUMNS = ID_COLUMNS + COVARIATE_NAMES + LABEL_COLUMNS
RAW_MEASUREMENT_COLUMNS = ("lvef", "ivs", "lvpw", "as_grade", "mr_grade", "tr_grade", "rv_grade")
STORE_ROW_COLUMN = "store_row"


@dataclass
class CohortManifest:
    """Ordered metadata rows. ``store_rows[i]`` is the store position of row ``i``."""

    frame: pd.DataFrame
    store_checksum: str | None = None
    store_rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        missing = [c for c in MANIFEST_COLUMNS if c not in self.frame.columns]
        if missing:
            raise DataFormatError(f"manifest is missing columns: {missing}")
        self.frame = self.frame.reset_index(drop=True)
        self.frame["record_id"] = self.frame["record_id"].astype(str)
        self.frame["patient_id"] = self.frame["patient_id"].astype(str)
        self.frame["split"] = self.frame["split"].astype(str)
        for c in LABEL_COLUMNS:
            self.frame[c] = self.frame[c].astype(np.int64)
        if self.store_rows is None:
            self.store_rows = np.arange(len(self.frame), dtype=np.int64)
        self.store_rows = np.asarray(self.store_rows, dtype=np.int64)
        if len(self.store_rows) != len(self.frame):
            raise DataFormatError("store_rows length does not match manifest rows")

    def __len__(self):
        return len(self.frame)

    @property
    def counts(self) -> dict[str, int]:
        vc = self.frame["split"].value_counts()
        return {s: int(vc.get(s, 0)) for s in SPLITS}

    @property
    def record_ids(self) -> np.ndarray:
        return self.frame["record_id"].to_numpy()

    def labels(self) -> np.ndarray:
        return self.frame[list(LABEL_COLUMNS)].to_numpy(dtype=np.int64)

    def covariates(self) -> np.ndarray:
        return self.frame[list(COVARIATE_NAMES)].to_numpy(dtype=np.float64)

    def split_positions(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.frame["split"].to_numpy() == split)

    def subset(self, positions) -> "CohortManifest":
        positions = np.asarray(positions, dtype=np.int64)
        return CohortManifest(
            self.frame.iloc[positions].reset_index(drop=True),
            store_checksum=self.store_checksum,
            store_rows=self.store_rows[positions],
        )

    def split(self, split: str) -> "CohortManifest":
        return self.subset(self.split_positions(split))

    def waveforms(self, store: np.ndarray) -> RecordArray:
        """Lazy waveform view of this manifest's rows in an opened store."""
        return RecordArray(store, self.store_rows)

    def is_identity_order(self) -> bool:
        return bool(np.array_equal(self.store_rows, np.arange(len(self.frame))))


def write_manifest(manifest: CohortManifest, path: str | os.PathLike) -> Path:
    """Write the CSV plus a ``.meta.json`` sidecar carrying counts and the store checksum."""
    path = Path(path)
    cols = list(MANIFEST_COLUMNS) + [c for c in RAW_MEASUREMENT_COLUMNS if c in manifest.frame.columns]
    frame = manifest.frame[cols].copy()
    if not manifest.is_identity_order():
        frame[STORE_ROW_COLUMN] = manifest.store_rows
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    meta = {"counts": manifest.counts, "store_checksum": manifest.store_checksum, "n_records": len(manifest)}
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def meta_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def read_manifest(path: str | os.PathLike) -> CohortManifest:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"record_id": str, "patient_id": str, "split": str}, encoding="utf-8", float_precision="round_trip")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as err:
        raise DataFormatError(f"{path}: {err}") from err
    store_rows = None
    if STORE_ROW_COLUMN in frame.columns:
        store_rows = frame.pop(STORE_ROW_COLUMN).to_numpy()
    checksum = None
    mp = meta_path(path)
    if mp.exists():
        checksum = json.loads(mp.read_text(encoding="utf-8")).get("store_checksum")
    return CohortManifest(frame, store_checksum=checksum, store_rows=store_rows)


@dataclass
class Cohort:
    """A manifest opened together with its waveform store."""

    manifest: CohortManifest
    store: np.ndarray
    root: Path | None = None

    def split(self, split: str):
        """Return ``(waveforms, labels, covariates, manifest)`` for one split."""
        sub = self.manifest.split(split)
        return sub.waveforms(self.store), sub.labels(), sub.covariates(), sub


MANIFEST_NAME = "manifest.csv"
STORE_NAME = "waveforms.ecgw"
STATS_NAME = "preprocess_stats.yaml"


def open_cohort(root: str | os.PathLike, *, verify: bool = False) -> Cohort:
    """Open ``manifest.csv`` + ``waveforms.ecgw`` from a cohort directory."""
    root = Path(root)
    manifest = read_manifest(root / MANIFEST_NAME)
    store = read_waveform_store(root / STORE_NAME, expected_checksum=manifest.store_checksum if verify else None)
    if manifest.store_rows.size and manifest.store_rows.max() >= len(store):
        raise DataFormatError(f"{root}: manifest refers to store rows beyond its {len(store)} records")
    return Cohort(manifest, store, root)
