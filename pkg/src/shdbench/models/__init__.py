from .checkpoint import (
    CHECKPOINT_ENV,
    CheckpointError,
    load_checkpoint,
    load_pretrained_backbone,
    resolve_pretrained,
    save_checkpoint,
    state_hash,
)
from .config import (
    AdaptationPolicy,
    BackboneConfig,
    ConfigError,
    FusionConfig,
    LoraConfig,
    MoFMConfig,
    resnet_config,
    transformer_config,
)
from .heads import ConcatFusion, CrossAttentionFusion, GatedFusion, MLPHead, TabularEmbedder, predict_proba
from .lora import AlreadyAdaptedError, LoRALinear, apply_lora, lora_param_count
from .mofm import InvariantViolation, MixtureOfBackbones, check_simplex, convex_logit_mixture
from .network import EcgNet, MissingCovariatesError, build_backbone, build_resnet1d, build_transformer_backbone
from .policy import ParamBudget, apply_freezing_policy, apply_mofm_policy, count_trainable, parameter_group
from .resnet1d import ResNet1d
from .transformer import TransformerBackbone

__all__ = [
    "CHECKPOINT_ENV",
    "AdaptationPolicy",
    "AlreadyAdaptedError",
    "BackboneConfig",
    "CheckpointError",
    "ConcatFusion",
    "ConfigError",
    "CrossAttentionFusion",
    "EcgNet",
    "FusionConfig",
    "GatedFusion",
    "InvariantViolation",
    "LoRALinear",
    "LoraConfig",
    "MLPHead",
    "MissingCovariatesError",
    "MixtureOfBackbones",
    "MoFMConfig",
    "ParamBudget",
    "ResNet1d",
    "TabularEmbedder",
    "TransformerBackbone",
    "apply_freezing_policy",
    "apply_mofm_policy",
    "apply_lora",
    "build_backbone",
    "build_resnet1d",
    "build_transformer_backbone",
    "check_simplex",
    "convex_logit_mixture",
    "count_trainable",
    "load_checkpoint",
    "load_pretrained_backbone",
    "lora_param_count",
    "parameter_group",
    "predict_proba",
    "resnet_config",
    "resolve_pretrained",
    "save_checkpoint",
    "state_hash",
    "transformer_config",
]
