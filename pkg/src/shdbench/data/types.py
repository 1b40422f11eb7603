"""Cohort data model: records, echo measurements, endpoint definitions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

N_LEADS = 12
N_SAMPLES = 2500
SAMPLING_RATE = 250
N_COVARIATES = 7

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
COVARIATE_NAMES = (
    "sex",
    "ventricular_rate",
    "atrial_rate",
    "pr_interval",
    "qrs_duration",
    "qtc",
    "age",
)
SPLITS = ("train", "val", "test")

ENDPOINTS = (
    "reduced_lvef",
    "increased_lvwt",
    "aortic_stenosis",
    "mitral_regurgitation",
    "tricuspid_regurgitation",
    "rv_dysfunction",
)
# manifest column for each endpoint, same order
LABEL_COLUMNS = ("y_lvef", "y_lvwt", "y_as", "y_mr", "y_tr", "y_rv")
ENDPOINT_TITLES = (
    "Reduced LVEF",
    "Increased LVWT",
    "Aortic stenosis",
    "Mitral regurgitation",
    "Tricuspid regurgitation",
    "RV systolic dysfunction",
)
N_LABELS = len(ENDPOINTS)


class DataFormatError(ValueError):
    """Malformed file, column layout or array shape."""


class IntegrityError(ValueError):
    """Checksum mismatch between a waveform store and its manifest."""


class DegenerateStatsError(ValueError):
    """Preprocessing statistics cannot be fitted (constant input)."""


class MissingMeasurementError(ValueError):
    pass


class Grade(enum.IntEnum):
    NONE = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3

    @classmethod
    def parse(cls, value) -> "Grade | None":
        if value is None or isinstance(value, Grade):
            return value
        if isinstance(value, float) and np.isnan(value):
            return None
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip().lower()
        if text in ("", "nan", "na", "none_reported"):
            return None
        try:
            return cls[text.upper()]
        except KeyError as err:
            raise DataFormatError(f"unknown grade {value!r}") from err


@dataclass(frozen=True)
class LabelVector:
    bits: tuple[int, ...]
    missing: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.bits) != N_LABELS:
            raise ValueError(f"label vector needs {N_LABELS} entries, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"label entries must be 0/1, got {self.bits}")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.bits, dtype=dtype or np.int8)

    def __iter__(self):
        return iter(self.bits)


@dataclass
class EchoMeasurements:
    """Echocardiography inputs to the six endpoint rules. ``None`` marks a missing value."""

    lvef: float | None = None
    ivs: float | None = None
    lvpw: float | None = None
    as_grade: Grade | None = None
    mr_grade: Grade | None = None
    tr_grade: Grade | None = None
    rv_grade: Grade | None = None

    def __post_init__(self):
        for name in ("as_grade", "mr_grade", "tr_grade", "rv_grade"):
            setattr(self, name, Grade.parse(getattr(self, name)))
        for name in ("lvef", "ivs", "lvpw"):
            v = getattr(self, name)
            if v is not None and np.isnan(v):
                setattr(self, name, None)
        if self.lvef is not None and not 0.0 <= self.lvef <= 100.0:
            raise ValueError(f"lvef must lie in [0, 100], got {self.lvef}")
        for name in ("ivs", "lvpw"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative, got {v}")


@dataclass
class EcgRecord:
    record_id: str
    patient_id: str
    split: str
    waveform: np.ndarray
    covariates: np.ndarray
    labels: LabelVector
    preprocessed: bool = False

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        self.waveform = np.asarray(self.waveform)
        if self.waveform.shape != (N_LEADS, N_SAMPLES):
            raise DataFormatError(
                f"waveform must be {N_LEADS}x{N_SAMPLES}, got {self.waveform.shape}"
            )
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.shape != (N_COVARIATES,):
            raise DataFormatError(f"expected {N_COVARIATES} covariates, got {self.covariates.shape}")
        if not isinstance(self.labels, LabelVector):
            self.labels = LabelVector(tuple(int(b) for b in self.labels))


@dataclass(frozen=True)
class EndpointRule:
    name: str
    column: str
    kind: str  # "lvef_max" | "wall_min" | "grade"
    threshold: float
    source: str


@dataclass(frozen=True)
class TargetSpec:
    endpoints: tuple[EndpointRule, ...] = field(
        default_factory=lambda: (
            EndpointRule("reduced_lvef", "y_lvef", "lvef_max", 45.0, "lvef"),
            EndpointRule("increased_lvwt", "y_lvwt", "wall_min", 1.3, "ivs,lvpw"),
            EndpointRule("aortic_stenosis", "y_as", "grade", Grade.MODERATE, "as_grade"),
            EndpointRule("mitral_regurgitation", "y_mr", "grade", Grade.MODERATE, "mr_grade"),
            EndpointRule("tricuspid_regurgitation", "y_tr", "grade", Grade.MODERATE, "tr_grade"),
            EndpointRule("rv_dysfunction", "y_rv", "grade", Grade.MODERATE, "rv_grade"),
        )
    )

    def __post_init__(self):
        names = tuple(e.name for e in self.endpoints)
        if names != ENDPOINTS:
            raise ValueError(f"endpoints must be exactly {ENDPOINTS} in order, got {names}")


@dataclass(frozen=True)
class PreprocessStats:
    clip_low: float
    clip_high: float
    mean: float
    std: float
    median_windows: tuple[int, int] = (51, 151)
    percentiles: tuple[float, float] = (0.1, 99.9)
    n_samples: int = 0

    def __post_init__(self):
        if not self.clip_low < self.clip_high:
            raise DegenerateStatsError(
                f"clip_low ({self.clip_low}) must be below clip_high ({self.clip_high})"
            )
        if not self.std > 0:
            raise DegenerateStatsError(f"std must be positive, got {self.std}")
        for w in self.median_windows:
            if w < 1 or w % 2 == 0:
                raise ValueError(f"median windows must be odd positive sample counts, got {w}")
