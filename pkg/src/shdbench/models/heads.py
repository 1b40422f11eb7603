"""Classifier head, covariate embedder and late-fusion operators."""

from __future__ import annotations

import torch
from torch import nn

from .config import FusionConfig


class MLPHead(nn.Module):
    """Two-layer perceptron with dropout producing one logit per label."""

    def __init__(self, d_in: int, hidden: int, n_out: int, dropout: float = 0.1):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, n_out))

    def forward(self, h):
        return self.net(h)


def predict_proba(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits)


class TabularEmbedder(nn.Module):
    """MLP mapping standardised covariates to a ``d_e``-wide embedding."""

    def __init__(self, n_in: int, hidden: int, d_e: int, zero_init: bool = False):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(n_in, hidden), nn.ReLU(), nn.Linear(hidden, d_e))
        if zero_init:
            nn.init.zeros_(self.net[-1].weight)
            nn.init.zeros_(self.net[-1].bias)

    def forward(self, u):
        return self.net(u)


class ConcatFusion(nn.Module):
    def forward(self, h, e, tokens=None):
        return torch.cat([h, e], dim=-1)


class GatedFusion(nn.Module):
    """``lam * h + (1 - lam) * e`` with ``lam = sigmoid(W [h; e] + b)``.

    ``forced_gate`` (a float or tensor broadcastable to ``h``) overrides the
    learned gate; it exists for limit checks.
    """

    def __init__(self, d: int):
        super().__init__()
        self.gate = nn.Linear(2 * d, d)
        self.forced_gate = None

    def gate_values(self, h, e):
        if self.forced_gate is not None:
            return torch.as_tensor(self.forced_gate, dtype=h.dtype, device=h.device).expand_as(h)
        return torch.sigmoid(self.gate(torch.cat([h, e], dim=-1)))

    def forward(self, h, e, tokens=None):
        lam = self.gate_values(h, e)
        return lam * h + (1.0 - lam) * e


class CrossAttentionFusion(nn.Module):
    """The covariate embedding queries the waveform tokens; output is ``[attended; e]``."""

    def __init__(self, d_tokens: int, d_e: int, n_heads: int):
        super().__init__()
        self.query = nn.Linear(d_e, d_tokens)
        self.attn = nn.MultiheadAttention(d_tokens, n_heads, batch_first=True)

    def forward(self, h, e, tokens):
        q = self.query(e)[:, None, :]
        attended, _ = self.attn(q, tokens, tokens, need_weights=False)
        return torch.cat([attended[:, 0], e], dim=-1)


def build_fusion(cfg: FusionConfig, d: int, d_tokens: int) -> tuple[nn.Module | None, nn.Module | None, int]:
    """Return ``(embedder, fusion, head_input_width)`` for a resolved fusion config."""
    if cfg.mode == "none":
        return None, None, d
    cfg = cfg.resolve(d)
    embedder = TabularEmbedder(cfg.n_covariates, cfg.hidden, cfg.d_e, cfg.zero_init)
    if cfg.mode == "concat":
        return embedder, ConcatFusion(), d + cfg.d_e
    if cfg.mode == "gated":
        return embedder, GatedFusion(d), d
    return embedder, CrossAttentionFusion(d_tokens, cfg.d_e, cfg.n_heads), d_tokens + cfg.d_e
