"""Mixtures of several backbones: embedding concatenation, gated embedding mixture, logit mixture."""

from __future__ import annotations

import torch
from torch import nn

from .config import BackboneConfig, MoFMConfig
from .heads import MLPHead
from .network import FrozenEvalMixin, build_backbone

SIMPLEX_TOL = 1e-6


class InvariantViolation(RuntimeError):
    pass


def check_simplex(g: torch.Tensor, tol: float = SIMPLEX_TOL) -> None:
    if (g < 0).any() or ((g.sum(dim=-1) - 1.0).abs() > tol).any():
        raise InvariantViolation("gate weights left the probability simplex")


def convex_logit_mixture(logits: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """``sum_k gate[:, k] * logits[k]`` for ``logits`` of shape (experts, batch, labels)."""
    check_simplex(gate)
    return torch.einsum("bk,kbl->bl", gate, logits)


class MixtureOfBackbones(FrozenEvalMixin, nn.Module):
    def __init__(self, config: MoFMConfig, experts: list[nn.Module] | None = None):
        super().__init__()
        self.config = config
        cfgs: tuple[BackboneConfig, ...] = config.experts
        self.experts = nn.ModuleList(experts if experts is not None else [build_backbone(c) for c in cfgs])
        dims = [c.embedding_dim for c in cfgs]
        k = len(cfgs)
        head_cfg = cfgs[0]
        self.forced_gate = None
        self.frozen_eval: list[str] = []
        if config.mode in ("concat", "gated"):
            self.proj = nn.ModuleList(nn.Linear(d, config.d_c) for d in dims)
        if config.mode == "concat":
            self.head = MLPHead(k * config.d_c, head_cfg.head_hidden, head_cfg.n_labels, head_cfg.head_dropout)
        else:
            self.gate = nn.Linear(sum(dims), k)
        if config.mode == "gated":
            self.head = MLPHead(config.d_c, head_cfg.head_hidden, head_cfg.n_labels, head_cfg.head_dropout)
        if config.mode == "logit_moe":
            self.heads = nn.ModuleList(MLPHead(d, c.head_hidden, c.n_labels, c.head_dropout) for d, c in zip(dims, cfgs))

    def gate_weights(self, embeddings: list[torch.Tensor]) -> torch.Tensor:
        if self.forced_gate is not None:
            g = torch.as_tensor(self.forced_gate, dtype=embeddings[0].dtype).expand(len(embeddings[0]), -1)
        else:
            g = torch.softmax(self.gate(torch.cat(embeddings, dim=-1)), dim=-1)
        check_simplex(g)
        return g

    def forward(self, x):
        embeddings = [expert(x)[1] for expert in self.experts]
        mode = self.config.mode
        if mode == "concat":
            return self.head(torch.cat([p(e) for p, e in zip(self.proj, embeddings)], dim=-1))
        g = self.gate_weights(embeddings)
        if mode == "gated":
            mixed = torch.stack([p(e) for p, e in zip(self.proj, embeddings)], dim=1)
            return self.head((g[..., None] * mixed).sum(dim=1))
        logits = torch.stack([h(e) for h, e in zip(self.heads, embeddings)])
        return convex_logit_mixture(logits, g)
