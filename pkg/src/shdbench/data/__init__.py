"""Cohort data model, storage formats, preprocessing and cohort statistics."""

from .cohort import (
    CohortStats,
    DownsampleResult,
    ValidationReport,
    backsolve_all_negative_count,
    cohort_stats,
    downsample_all_negative,
    validate_cohort,
)
from .labels import derive_label_frame, derive_labels
from .manifest import Cohort, CohortManifest, open_cohort, read_manifest, write_manifest
from .preprocess import (
    WaveformPreprocessor,
    fit_preprocess_stats,
    load_stats,
    preprocess_waveform,
    save_stats,
)
from .release import import_release
from .store import RecordArray, read_waveform_store, write_waveform_store
from .synthetic import SyntheticConfig, generate_synthetic_cohort
from .types import (
    COVARIATE_NAMES,
    ENDPOINTS,
    LABEL_COLUMNS,
    DataFormatError,
    DegenerateStatsError,
    EchoMeasurements,
    EcgRecord,
    Grade,
    IntegrityError,
    LabelVector,
    PreprocessStats,
    TargetSpec,
)
