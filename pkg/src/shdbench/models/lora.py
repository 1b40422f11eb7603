"""Low-rank adapters on the attention query and value projections."""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import LoraConfig
from .transformer import TransformerBackbone


class AlreadyAdaptedError(RuntimeError):
    pass


class LoRALinear(nn.Module):
    """``W x + scale * B (A x)`` around a frozen base projection; ``B`` starts at zero."""

    def __init__(self, base: nn.Linear, rank: int, scale: float):
        super().__init__()
        self.base = base
        self.scale = scale
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features, dtype=base.weight.dtype))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        for p in self.base.parameters():
            p.requires_grad_(False)

    @property
    def in_features(self):
        return self.base.in_features

    @property
    def out_features(self):
        return self.base.out_features

    def forward(self, x):
        return self.base(x) + self.scale * (x @ self.lora_a.T) @ self.lora_b.T


def apply_lora(backbone: TransformerBackbone, config: LoraConfig) -> TransformerBackbone:
    """Wrap every block's query and value projection in place."""
    for block in backbone.blocks:
        if isinstance(block.attn.q, LoRALinear) or isinstance(block.attn.v, LoRALinear):
            raise AlreadyAdaptedError("backbone already carries LoRA adapters")
    for p in backbone.parameters():
        p.requires_grad_(False)
    for block in backbone.blocks:
        block.attn.q = LoRALinear(block.attn.q, config.rank, config.scale)
        block.attn.v = LoRALinear(block.attn.v, config.rank, config.scale)
    return backbone


def lora_parameters(module: nn.Module):
    return [p for name, p in module.named_parameters() if name.rsplit(".", 1)[-1] in ("lora_a", "lora_b")]


def lora_param_count(n_blocks: int, d: int, rank: int, n_targets: int = 2) -> int:
    """Closed-form adapter size for square ``d x d`` projections."""
    return n_blocks * n_targets * 2 * d * rank
