from .beats import NO_BEATS, detect_beats
from .boosting import BoostedTreeOvR, TuningResult, endpoint_seed, sample_params, train_gbdt_ovr, tune_gbdt
from .catalog import (
    CATALOG_VERSION,
    CATEGORIES,
    FeatureCatalog,
    FeatureDescriptor,
    build_default_catalog,
    load_catalog,
    write_catalog,
)
from .extract import (
    EcgFeatureExtractor,
    FeatureMatrix,
    compute_feature_values,
    extract_features,
    read_feature_matrix,
    write_feature_matrix,
)
from .ranking import (
    WEIGHTS,
    FeatureRanking,
    combine_scores,
    mutual_information,
    permutation_scores,
    rank_features,
    rank_normalize,
    topk_sensitivity,
)

__all__ = [
    "CATALOG_VERSION",
    "CATEGORIES",
    "NO_BEATS",
    "WEIGHTS",
    "BoostedTreeOvR",
    "EcgFeatureExtractor",
    "FeatureCatalog",
    "FeatureDescriptor",
    "FeatureMatrix",
    "FeatureRanking",
    "TuningResult",
    "build_default_catalog",
    "combine_scores",
    "compute_feature_values",
    "detect_beats",
    "endpoint_seed",
    "extract_features",
    "load_catalog",
    "mutual_information",
    "permutation_scores",
    "rank_features",
    "rank_normalize",
    "read_feature_matrix",
    "sample_params",
    "topk_sensitivity",
    "train_gbdt_ovr",
    "tune_gbdt",
    "write_catalog",
    "write_feature_matrix",
]
