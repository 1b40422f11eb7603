"""Binary waveform store.

Layout (little-endian)::

    magic     4s   b"ECGW"
    version   u32  1
    count     u64  number of records
    leads     u32  12
    samples   u32  2500
    dtype     u8   1 = float32
    reserved  7 bytes (zero)

followed by ``count`` records, each a row-major lead-by-time float32 matrix.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .types import N_LEADS, N_SAMPLES, DataFormatError, EcgRecord, IntegrityError

MAGIC = b"ECGW"
VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sIQIIB7x")
HEADER_SIZE = HEADER.size  # 32
RECORD_BYTES = N_LEADS * N_SAMPLES * 4


def file_checksum(path: str | os.PathLike, chunk_size: int = 1 << 22) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(chunk_size):
            h.update(chunk)
    return h.hexdigest()


def _as_matrix(item) -> np.ndarray:
    w = item.waveform if isinstance(item, EcgRecord) else item
    w = np.asarray(w)
    if w.shape != (N_LEADS, N_SAMPLES):
        raise DataFormatError(f"record must be {N_LEADS}x{N_SAMPLES}, got {w.shape}")
    return w


class WaveformStoreWriter:
    """Streaming writer; records are appended in manifest order.

    Use as a context manager; the record count in the header and the
    checksum are finalised on close.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.count = 0
        self.checksum: str | None = None
        self._fh = open(self.path, "wb")
        self._fh.write(b"\0" * HEADER_SIZE)

    def append(self, waveforms) -> None:
        """Append one 12x2500 matrix or a stack of shape (n, 12, 2500)."""
        arr = np.asarray(waveforms)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != (N_LEADS, N_SAMPLES):
            raise DataFormatError(f"expected (n, {N_LEADS}, {N_SAMPLES}), got {arr.shape}")
        self._fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        self.count += arr.shape[0]

    def close(self) -> str:
        if self._fh.closed:
            return self.checksum
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.count, N_LEADS, N_SAMPLES, DTYPE_FLOAT32))
        self._fh.close()
        self.checksum = file_checksum(self.path)
        return self.checksum

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        if exc_type is not None:
            self.path.unlink(missing_ok=True)
        return False


def write_waveform_store(records: Iterable, path: str | os.PathLike) -> str:
    """Write records (EcgRecord objects or 12x2500 arrays) and return the file's sha256."""
    if isinstance(records, np.ndarray) and records.ndim == 3:
        items = [records]
        if records.shape[0] == 0:
            raise ValueError("cannot write an empty waveform store")
    else:
        items = [_as_matrix(r) for r in records]
        if not items:
            raise ValueError("cannot write an empty waveform store")
    with WaveformStoreWriter(path) as writer:
        for item in items:
            writer.append(item)
    return writer.checksum


def read_header(path: str | os.PathLike) -> int:
    """Validate the header and file size; return the record count."""
    path = Path(path)
    size = path.stat().st_size
    if size < HEADER_SIZE:
        raise DataFormatError(f"{path}: truncated header ({size} bytes)")
    with open(path, "rb") as fh:
        magic, version, count, leads, samples, dtype = HEADER.unpack(fh.read(HEADER_SIZE))
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if (leads, samples, dtype) != (N_LEADS, N_SAMPLES, DTYPE_FLOAT32):
        raise DataFormatError(f"{path}: unsupported layout leads={leads} samples={samples} dtype={dtype}")
    expected = HEADER_SIZE + count * RECORD_BYTES
    if size != expected:
        raise DataFormatError(f"{path}: size {size} does not match header ({expected} bytes expected)")
    return count


def read_waveform_store(
    path: str | os.PathLike,
    indices=None,
    *,
    expected_checksum: str | None = None,
) -> np.ndarray:
    """Open a store as a read-only ``(n, 12, 2500)`` float32 array.

    Without ``indices`` the result is a memory map (nothing is loaded);
    with ``indices`` the requested records are copied out in the given order.
    """
    count = read_header(path)
    if expected_checksum is not None:
        actual = file_checksum(path)
        if actual != expected_checksum:
            raise IntegrityError(f"{path}: checksum {actual[:12]}... does not match manifest {expected_checksum[:12]}...")
    if count == 0:
        data = np.zeros((0, N_LEADS, N_SAMPLES), dtype=np.float32)
    else:
        data = np.memmap(path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=(count, N_LEADS, N_SAMPLES))
    if indices is None:
        return data
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < -count or idx.max() >= count):
        raise IndexError(f"indices out of range for a store of {count} records")
    return np.array(data[idx], dtype=np.float32)


class RecordArray:
    """Lazy view of selected store rows; indexing returns in-memory float32 arrays."""

    def __init__(self, source: np.ndarray, rows=None):
        self.source = source
        self.rows = np.arange(len(source)) if rows is None else np.asarray(rows, dtype=np.int64)

    @property
    def shape(self):
        return (len(self.rows),) + tuple(self.source.shape[1:])

    @property
    def ndim(self):
        return len(self.shape)

    dtype = np.dtype(np.float32)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            return np.asarray(self.source[self.rows[item]], dtype=np.float32)
        rows = self.rows[item]
        if isinstance(item, slice) and rows.size and np.all(np.diff(rows) == 1):
            return np.asarray(self.source[rows[0] : rows[-1] + 1], dtype=np.float32)
        return np.asarray(self.source[rows], dtype=np.float32)

    def subset(self, positions) -> "RecordArray":
        return RecordArray(self.source, self.rows[np.asarray(positions)])

    def __array__(self, dtype=None, copy=None):
        out = self[:]
        return out if dtype is None else out.astype(dtype)
