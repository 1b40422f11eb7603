"""Convolutional front-end followed by a pre-norm transformer encoder.

The backbone runs as a fixed sequence of stages (conv, stem, each block,
final norm) so callers can execute any contiguous range; training uses
this to cache the output of a frozen prefix.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from .config import BackboneConfig


class ConvFrontEnd(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        layers = []
        c_in = config.n_leads
        for c_out, k, s in zip(config.conv_channels, config.conv_kernels, config.conv_strides):
            layers += [nn.Conv1d(c_in, c_out, k, stride=s, padding=k // 2, bias=False), nn.GroupNorm(1, c_out), nn.GELU()]
            c_in = c_out
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x).transpose(1, 2)  # (batch, frames, channels)


class Stem(nn.Module):
    """Frame projection, learned positions and the mask embedding used by self-supervision."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.norm = nn.LayerNorm(config.conv_channels[-1])
        self.proj = nn.Linear(config.conv_channels[-1], config.d_model)
        self.pos = nn.Parameter(torch.zeros(1, config.n_tokens, config.d_model))
        self.mask_token = nn.Parameter(torch.zeros(config.d_model))
        self.drop = nn.Dropout(config.dropout)
        nn.init.normal_(self.pos, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)

    def latents(self, feats):
        return self.proj(self.norm(feats))

    def forward(self, feats, mask=None):
        z = self.latents(feats)
        if mask is not None:
            z = torch.where(mask[..., None], self.mask_token.to(z.dtype), z)
        return self.drop(z + self.pos)


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.dropout = dropout

    def _split(self, t):
        b, n, d = t.shape
        return t.view(b, n, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, x):
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(d // self.n_heads)
        att = F.dropout(att.softmax(dim=-1), self.dropout, self.training)
        return self.out((att @ v).transpose(1, 2).reshape(b, n, d))


class TransformerBlock(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        d = config.d_model
        self.norm1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, config.n_heads, config.dropout)
        self.norm2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, config.ff_dim), nn.GELU(), nn.Dropout(config.dropout), nn.Linear(config.ff_dim, d))
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x):
        x = x + self.drop(self.attn(self.norm1(x)))
        return x + self.drop(self.mlp(self.norm2(x)))


class TransformerBackbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.conv = ConvFrontEnd(config)
        self.stem = Stem(config)
        self.blocks = nn.ModuleList(TransformerBlock(config) for _ in range(config.n_blocks))
        self.final_norm = nn.LayerNorm(config.d_model)

    @property
    def n_tokens(self) -> int:
        return self.config.n_tokens

    @property
    def n_stages(self) -> int:
        return len(self.blocks) + 3

    def stage(self, i: int) -> nn.Module:
        """Stage ``i`` of conv, stem, block 0..L-1, final norm."""
        if i == 0:
            return self.conv
        if i == 1:
            return self.stem
        if i == self.n_stages - 1:
            return self.final_norm
        return self.blocks[i - 2]

    def run(self, h, start: int = 0, stop: int | None = None, mask=None):
        stop = self.n_stages if stop is None else stop
        for i in range(start, stop):
            h = self.stem(h, mask) if i == 1 else self.stage(i)(h)
        return h

    def forward(self, x, mask=None):
        """Return ``(tokens, mean-pooled embedding)``."""
        tokens = self.run(x, mask=mask)
        return tokens, tokens.mean(dim=1)
