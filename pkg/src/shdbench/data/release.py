"""Import of the public EchoNext release into the native store + manifest format.

The release ships preprocessed waveforms as one array per split plus a
metadata table. Column and file names are resolved through a layout
mapping; the defaults below follow the public release and can be
overridden with a ``release_layout.yaml`` placed in the release directory
or passed explicitly.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .manifest import MANIFEST_NAME, STORE_NAME, CohortManifest, write_manifest
from .store import WaveformStoreWriter, read_waveform_store
from .types import COVARIATE_NAMES, LABEL_COLUMNS, N_LEADS, N_SAMPLES, SPLITS, DataFormatError

logger = logging.getLogger(__name__)

DEFAULT_LAYOUT = {
    "metadata_glob": ["*metadata*.csv", "*.csv"],
    "waveform_glob": {
        "train": ["*train*wave*.npy", "*train*.npy"],
        "val": ["*val*wave*.npy", "*val*.npy"],
        "test": ["*test*wave*.npy", "*test*.npy"],
    },
    "columns": {
        "record_id": ["ecg_key", "record_id", "ecg_id"],
        "patient_id": ["patient_key", "patient_id"],
        "split": ["split"],
        "sex": ["sex"],
        "ventricular_rate": ["ventricular_rate"],
        "atrial_rate": ["atrial_rate"],
        "pr_interval": ["pr_interval"],
        "qrs_duration": ["qrs_duration"],
        "qtc": ["qt_corrected", "qtc"],
        "age": ["age_at_ecg", "age"],
        "y_lvef": ["lvef_lte_45_flag", "y_lvef"],
        "y_lvwt": ["lvwt_gte_13_flag", "y_lvwt"],
        "y_as": ["aortic_stenosis_moderate_or_greater_flag", "y_as"],
        "y_mr": ["mitral_regurgitation_moderate_or_greater_flag", "y_mr"],
        "y_tr": ["tricuspid_regurgitation_moderate_or_greater_flag", "y_tr"],
        "y_rv": ["rv_systolic_dysfunction_moderate_or_greater_flag", "y_rv"],
    },
    "split_values": {"train": ["train"], "val": ["val", "valid", "validation"], "test": ["test"]},
}
LAYOUT_FILE = "release_layout.yaml"
RELEASE_TRAIN_SIZE = 72_475


def load_layout(release_path: Path, layout: dict | str | os.PathLike | None = None) -> dict:
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULT_LAYOUT.items()}
    override = layout
    if override is None and (release_path / LAYOUT_FILE).exists():
        override = release_path / LAYOUT_FILE
    if isinstance(override, (str, os.PathLike)):
        override = yaml.safe_load(Path(override).read_text(encoding="utf-8")) or {}
    for key, value in (override or {}).items():
        if key not in merged:
            raise DataFormatError(f"unknown release layout key {key!r}")
        if isinstance(merged[key], dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def _first_match(root: Path, patterns) -> Path | None:
    for pattern in patterns:
        hits = sorted(p for p in root.glob(pattern) if p.is_file())
        if hits:
            return hits[0]
    return None


def _to_lead_major(arr: np.ndarray) -> np.ndarray:
    """Accept (n,1,2500,12), (n,2500,12) or (n,12,2500)."""
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise DataFormatError(f"waveform array must be 3-D after squeezing, got {arr.shape}")
    if arr.shape[1:] == (N_LEADS, N_SAMPLES):
        return arr
    if arr.shape[1:] == (N_SAMPLES, N_LEADS):
        return np.swapaxes(arr, 1, 2)
    raise DataFormatError(f"waveform array has unsupported shape {arr.shape}")


def _sex_code(values: pd.Series) -> pd.Series:
    if pd.api.types.is_numeric_dtype(values):
        return values.astype(float)
    mapping = {"m": 1.0, "male": 1.0, "f": 0.0, "female": 0.0}
    return values.astype(str).str.strip().str.lower().map(mapping).astype(float)


def import_release(release_path: str | os.PathLike, out_dir: str | os.PathLike, layout=None) -> CohortManifest:
    """Convert a release directory into ``manifest.csv`` + ``waveforms.ecgw`` under ``out_dir``.

    Signals are copied as released (they are already preprocessed).
    """
    root = Path(release_path)
    if not root.is_dir() or not any(root.iterdir()):
        raise DataFormatError(f"{root}: release directory is missing or empty")
    lay = load_layout(root, layout)
    meta_file = _first_match(root, lay["metadata_glob"])
    if meta_file is None:
        raise DataFormatError(f"{root}: no metadata table found")
    meta = pd.read_csv(meta_file)

    resolved = {}
    for target, candidates in lay["columns"].items():
        col = next((c for c in candidates if c in meta.columns), None)
        if col is None:
            raise DataFormatError(f"{meta_file.name}: missing column for {target!r} (tried {candidates})")
        resolved[target] = col

    split_map = {v: s for s, vals in lay["split_values"].items() for v in vals}
    split = meta[resolved["split"]].astype(str).str.strip().str.lower().map(split_map)
    if split.isna().any():
        bad = sorted(meta.loc[split.isna(), resolved["split"]].astype(str).unique())
        raise DataFormatError(f"unrecognised split values {bad}")

    frame = pd.DataFrame({"record_id": meta[resolved["record_id"]].astype(str), "patient_id": meta[resolved["patient_id"]].astype(str), "split": split})
    frame["sex"] = _sex_code(meta[resolved["sex"]])
    for c in COVARIATE_NAMES[1:]:
        frame[c] = pd.to_numeric(meta[resolved[c]], errors="coerce")
    for c in LABEL_COLUMNS:
        frame[c] = pd.to_numeric(meta[resolved[c]], errors="raise").fillna(0).astype(np.int64)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks = []
    with WaveformStoreWriter(out_dir / STORE_NAME) as writer:
        for s in SPLITS:
            rows = frame[frame["split"] == s]
            if rows.empty:
                raise DataFormatError(f"release has no {s} records")
            wave_file = _first_match(root, lay["waveform_glob"][s])
            if wave_file is None:
                raise DataFormatError(f"{root}: no waveform array for split {s}")
            arr = _to_lead_major(np.load(wave_file, mmap_mode="r"))
            if len(arr) != len(rows):
                raise DataFormatError(f"{wave_file.name}: {len(arr)} waveforms but {len(rows)} {s} metadata rows")
            for start in range(0, len(arr), 256):
                writer.append(np.asarray(arr[start : start + 256], dtype=np.float32))
            blocks.append(rows)
            logger.info("imported %s: %d records", s, len(rows))
    manifest = CohortManifest(pd.concat(blocks, ignore_index=True), store_checksum=writer.checksum)
    if manifest.counts["train"] != RELEASE_TRAIN_SIZE:
        logger.warning("train split has %d records; the release documents %d", manifest.counts["train"], RELEASE_TRAIN_SIZE)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    read_waveform_store(out_dir / STORE_NAME)
    return manifest
