from .estimators import BinarySuite, CovariateScaler, EcgNetClassifier
from .runner import (
    RESULT_COLUMNS,
    VARIANTS,
    ExperimentResult,
    ExperimentSpec,
    SpecError,
    append_results,
    config_hash,
    load_dataset,
    run_experiment,
)
from .ssl import SslConfig, SslResult, contrastive_loss, expected_coverage, span_mask, ssl_pretrain
from .supervised import (
    DivergenceError,
    NoTrainableParametersError,
    TrainConfig,
    TrainResult,
    bce_loss,
    predict_logits,
    train_supervised,
)

__all__ = [
    "RESULT_COLUMNS",
    "VARIANTS",
    "BinarySuite",
    "CovariateScaler",
    "DivergenceError",
    "EcgNetClassifier",
    "ExperimentResult",
    "ExperimentSpec",
    "NoTrainableParametersError",
    "SpecError",
    "SslConfig",
    "SslResult",
    "TrainConfig",
    "TrainResult",
    "append_results",
    "bce_loss",
    "config_hash",
    "contrastive_loss",
    "expected_coverage",
    "load_dataset",
    "predict_logits",
    "run_experiment",
    "span_mask",
    "ssl_pretrain",
    "train_supervised",
]
