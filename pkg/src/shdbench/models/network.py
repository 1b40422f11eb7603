"""Waveform classifier: backbone, optional covariate fusion, MLP head."""

from __future__ import annotations

import torch
from torch import nn

from .config import BackboneConfig, FusionConfig
from .heads import MLPHead, build_fusion
from .resnet1d import ResNet1d
from .transformer import TransformerBackbone


def build_backbone(config: BackboneConfig) -> nn.Module:
    return TransformerBackbone(config) if config.family == "conv_transformer" else ResNet1d(config)


def build_resnet1d(config: BackboneConfig, fusion: FusionConfig | None = None) -> "EcgNet":
    if config.family != "resnet1d":
        raise ValueError("build_resnet1d needs a resnet1d config")
    return EcgNet(config, fusion)


def build_transformer_backbone(config: BackboneConfig) -> TransformerBackbone:
    if config.family != "conv_transformer":
        raise ValueError("build_transformer_backbone needs a conv_transformer config")
    return TransformerBackbone(config)


class MissingCovariatesError(ValueError):
    pass


class FrozenEvalMixin:
    """Keeps the modules named in ``frozen_eval`` in eval mode whenever the model trains."""

    frozen_eval: list[str]

    def train(self, mode: bool = True):
        super().train(mode)
        if mode:
            modules = dict(self.named_modules())
            for name in self.frozen_eval:
                modules[name].eval()
        return self


class EcgNet(FrozenEvalMixin, nn.Module):
    """``forward(x, u=None)`` maps ``(batch, 12, 2500)`` waveforms (and covariates) to logits."""

    def __init__(self, config: BackboneConfig, fusion: FusionConfig | None = None, backbone: nn.Module | None = None):
        super().__init__()
        self.config = config
        self.fusion_config = fusion or FusionConfig()
        self.backbone = backbone if backbone is not None else build_backbone(config)
        self.embedder, self.fusion, d_head = build_fusion(self.fusion_config, config.embedding_dim, config.token_dim)
        self.head = MLPHead(d_head, config.head_hidden, config.n_labels, config.head_dropout)
        self.frozen_eval: list[str] = []  # names of modules held in eval mode while training

    @property
    def uses_covariates(self) -> bool:
        return self.fusion is not None

    @property
    def is_transformer(self) -> bool:
        return isinstance(self.backbone, TransformerBackbone)

    def fuse(self, tokens, h, u=None):
        if self.fusion is None:
            return h
        if u is None:
            raise MissingCovariatesError(f"{self.fusion_config.mode} fusion needs covariates")
        return self.fusion(h, self.embedder(u), tokens)

    def represent(self, x, u=None):
        tokens, h = self.backbone(x)
        return self.fuse(tokens, h, u)

    def forward(self, x, u=None):
        return self.head(self.represent(x, u))

    def forward_from(self, h, start: int, u=None):
        """Logits from an intermediate backbone state produced by ``backbone.run(x, 0, start)``."""
        if start == 0:
            return self(h, u)
        if not self.is_transformer:
            raise ValueError("intermediate entry points exist only for the transformer backbone")
        tokens = self.backbone.run(h, start)
        return self.head(self.fuse(tokens, tokens.mean(dim=1), u))

    def frozen_prefix(self) -> int:
        """Number of leading backbone stages without any trainable parameter."""
        if not self.is_transformer:
            return 0
        n = 0
        for i in range(self.backbone.n_stages):
            if any(p.requires_grad for p in self.backbone.stage(i).parameters()):
                break
            n += 1
        return n
