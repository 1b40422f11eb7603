"""Architecture and adaptation configuration objects."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from ..data.types import N_COVARIATES, N_LABELS, N_LEADS, N_SAMPLES

FAMILIES = ("resnet1d", "conv_transformer")
FUSION_MODES = ("none", "concat", "gated", "cross_attention")
MOFM_MODES = ("concat", "gated", "logit_moe")


class ConfigError(ValueError):
    pass


def conv_output_length(n: int, kernel: int, stride: int) -> int:
    """Output length of a convolution padded with ``kernel // 2`` on both sides."""
    return (n + 2 * (kernel // 2) - kernel) // stride + 1


@dataclass(frozen=True)
class BackboneConfig:
    family: str = "conv_transformer"
    # convolutional front-end (conv_transformer)
    conv_channels: tuple[int, ...] = (384, 384, 768, 768)
    conv_kernels: tuple[int, ...] = (7, 5, 3, 3)
    conv_strides: tuple[int, ...] = (2, 2, 2, 2)
    # transformer encoder
    n_blocks: int = 12
    d_model: int = 768
    n_heads: int = 12
    ff_dim: int = 3072
    dropout: float = 0.1
    # resnet1d
    resnet_widths: tuple[int, ...] = (64, 128, 256, 512)
    resnet_kernel: int = 7
    resnet_blocks_per_stage: int = 2
    embed_dim: int = 768
    # classifier head
    head_hidden: int = 768
    head_dropout: float = 0.1
    n_labels: int = N_LABELS
    n_leads: int = N_LEADS
    n_samples: int = N_SAMPLES

    def __post_init__(self):
        for name in ("conv_channels", "conv_kernels", "conv_strides", "resnet_widths"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown backbone family {self.family!r}; choose from {FAMILIES}")
        if self.n_labels < 1 or self.head_hidden < 1:
            raise ConfigError("n_labels and head_hidden must be positive")
        if self.family == "conv_transformer":
            if self.n_blocks < 1:
                raise ConfigError(f"block count must be >= 1, got {self.n_blocks}")
            if self.d_model % self.n_heads:
                raise ConfigError(f"hidden width {self.d_model} is not divisible by {self.n_heads} heads")
            if not len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides) >= 1:
                raise ConfigError("conv channels, kernels and strides must have the same non-zero length")
        else:
            if not self.resnet_widths or self.resnet_blocks_per_stage < 1:
                raise ConfigError("resnet needs at least one stage with one block")

    @property
    def n_tokens(self) -> int:
        n = self.n_samples
        for k, s in zip(self.conv_kernels, self.conv_strides):
            n = conv_output_length(n, k, s)
        return n

    @property
    def embedding_dim(self) -> int:
        return self.d_model if self.family == "conv_transformer" else self.embed_dim

    @property
    def token_dim(self) -> int:
        return self.d_model if self.family == "conv_transformer" else self.resnet_widths[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)

    def with_(self, **changes) -> "BackboneConfig":
        return replace(self, **changes)


def transformer_config(preset: str = "full", **overrides) -> BackboneConfig:
    if preset == "full":
        base = BackboneConfig()
    elif preset == "mini":
        # stronger early downsampling keeps the token count near 40 for CPU runs
        base = BackboneConfig(
            conv_channels=(32, 32, 64, 64),
            conv_kernels=(7, 5, 3, 3),
            conv_strides=(4, 4, 2, 2),
            n_blocks=4,
            d_model=64,
            n_heads=4,
            ff_dim=128,
            head_hidden=32,
        )
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    return replace(base, **overrides)


def resnet_config(preset: str = "full", **overrides) -> BackboneConfig:
    if preset == "full":
        base = BackboneConfig(family="resnet1d")
    elif preset == "mini":
        base = BackboneConfig(family="resnet1d", resnet_widths=(8, 16, 32, 64), embed_dim=64, head_hidden=32)
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    return replace(base, **overrides)


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 16
    alpha: float | None = None  # defaults to rank, i.e. scale 1
    targets: tuple[str, ...] = ("q", "v")

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {self.rank}")
        if tuple(self.targets) != ("q", "v"):
            raise ConfigError("LoRA adapters are placed on the query and value projections only")

    @property
    def scale(self) -> float:
        return (self.rank if self.alpha is None else self.alpha) / self.rank


@dataclass(frozen=True)
class AdaptationPolicy:
    """Which parts of a transformer classifier train: the top ``b`` blocks, the conv front-end, LoRA adapters."""

    b: int = 0
    conv_trainable: bool = False
    lora: LoraConfig | None = None

    def __post_init__(self):
        if self.b < 0:
            raise ConfigError(f"b must be >= 0, got {self.b}")
        if self.lora is not None and (self.conv_trainable or self.b != 0):
            raise ConfigError("LoRA keeps the backbone frozen: requires b=0 and a frozen conv front-end")

    def check(self, n_blocks: int) -> None:
        if self.b > n_blocks:
            raise ConfigError(f"b={self.b} exceeds the {n_blocks} transformer blocks")

    def to_dict(self) -> dict:
        return {"b": self.b, "conv_trainable": self.conv_trainable, "lora_rank": self.lora.rank if self.lora else None}


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "none"
    d_e: int | None = None  # tabular embedding width; defaults to the waveform embedding width
    hidden: int = 64
    n_heads: int = 4
    n_covariates: int = N_COVARIATES
    zero_init: bool = False

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}; choose from {FUSION_MODES}")

    def resolve(self, d: int) -> "FusionConfig":
        d_e = d if self.d_e is None else self.d_e
        if self.mode == "gated" and d_e != d:
            raise ConfigError(f"gated fusion needs d_e == d, got d_e={d_e}, d={d}")
        return replace(self, d_e=d_e)


@dataclass(frozen=True)
class MoFMConfig:
    experts: tuple[BackboneConfig, ...] = field(default_factory=tuple)
    policies: tuple[AdaptationPolicy, ...] = field(default_factory=tuple)
    mode: str = "logit_moe"
    d_c: int = 768

    def __post_init__(self):
        if len(self.experts) < 2:
            raise ConfigError("a mixture needs at least two experts")
        if self.policies and len(self.policies) != len(self.experts):
            raise ConfigError("one adaptation policy per expert is required")
        if self.mode not in MOFM_MODES:
            raise ConfigError(f"unknown mixture mode {self.mode!r}; choose from {MOFM_MODES}")
