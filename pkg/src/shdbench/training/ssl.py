"""Masked-latent contrastive adaptation of a transformer backbone on unlabeled waveforms."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..data._validation import check_waveforms
from ..models.transformer import TransformerBackbone

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SslConfig:
    mask_prob: float = 0.065
    span: int = 10
    negatives: int = 100
    temperature: float = 0.1
    steps: int = 500
    batch_size: int = 16
    lr: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_prob < 1.0:
            raise ValueError(f"mask_prob must lie in (0, 1), got {self.mask_prob}")
        if self.span < 1 or self.negatives < 1:
            raise ValueError("span and negatives must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("steps must be >= 0, batch_size >= 1 and lr > 0")


def span_mask(batch: int, n_frames: int, mask_prob: float, span: int, generator: torch.Generator) -> torch.Tensor:
    """Boolean (batch, frames) mask: each frame starts a span of ``span`` frames with probability ``mask_prob``.

    Spans are clipped at the sequence end. A sequence with no start gets
    one uniformly placed start so every row has a masked frame.
    """
    starts = torch.rand(batch, n_frames, generator=generator) < mask_prob
    empty = ~starts.any(dim=1)
    if empty.any():
        forced = torch.randint(n_frames, (int(empty.sum()),), generator=generator)
        starts[empty.nonzero()[:, 0], forced] = True
    mask = torch.zeros_like(starts)
    for offset in range(span):
        mask[:, offset:] |= starts[:, : n_frames - offset]
    return mask


def expected_coverage(mask_prob: float, span: int) -> float:
    """Masked probability of a frame at least ``span - 1`` frames from the start."""
    return 1.0 - (1.0 - mask_prob) ** span


def contrastive_loss(
    context: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
    negatives: int,
    temperature: float,
    generator: torch.Generator,
) -> torch.Tensor:
    """InfoNCE over masked frames; distractors are other frames of the same sequence."""
    b_idx, t_idx = mask.nonzero(as_tuple=True)
    n_frames = targets.shape[1]
    if n_frames < 2:
        raise ValueError("contrastive loss needs at least two frames per sequence")
    # draw from the other n_frames - 1 positions by skipping the true index
    draw = torch.randint(n_frames - 1, (len(t_idx), negatives), generator=generator)
    neg_t = draw + (draw >= t_idx[:, None]).long()
    c = context[b_idx, t_idx]
    candidates = torch.cat([targets[b_idx, t_idx][:, None], targets[b_idx[:, None], neg_t]], dim=1)
    logits = F.cosine_similarity(c[:, None, :], candidates, dim=-1) / temperature
    return F.cross_entropy(logits, torch.zeros(len(logits), dtype=torch.long))


@dataclass
class SslResult:
    backbone: TransformerBackbone
    losses: list[float] = field(default_factory=list)


def ssl_pretrain(backbone: TransformerBackbone, waveforms, config: SslConfig) -> SslResult:
    """Continue training ``backbone`` in place with the masked contrastive objective.

    Only waveforms are accepted; labels never enter this stage. A fresh
    projection of the context outputs is trained alongside and discarded.
    """
    waveforms = check_waveforms(waveforms)
    if config.steps == 0:
        return SslResult(backbone)
    n_frames = backbone.n_tokens
    if config.mask_prob * n_frames < 1:
        warnings.warn(f"mask_prob * frames = {config.mask_prob * n_frames:.2f} < 1 expected span starts", stacklevel=2)

    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    dtype = next(backbone.parameters()).dtype
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        proj = nn.Linear(backbone.config.d_model, backbone.config.d_model).to(dtype)
    params = [p for p in backbone.parameters()] + list(proj.parameters())
    for p in backbone.parameters():
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=config.lr)
    backbone.train()
    losses = []
    n = len(waveforms)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)  # dropout stream
        for step in range(config.steps):
            idx = np.sort(rng.choice(n, size=min(config.batch_size, n), replace=False))
            x = torch.as_tensor(np.asarray(waveforms[idx]), dtype=dtype)
            feats = backbone.conv(x)
            targets = backbone.stem.latents(feats)
            mask = span_mask(len(x), n_frames, config.mask_prob, config.span, gen)
            h = backbone.stem(feats, mask)
            for blk in backbone.blocks:
                h = blk(h)
            context = proj(backbone.final_norm(h))
            loss = contrastive_loss(context, targets, mask, config.negatives, config.temperature, gen)
            if not math.isfinite(loss.item()):
                raise FloatingPointError(f"self-supervised loss became non-finite at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            if step % 50 == 0:
                logger.info("ssl step %d loss %.4f", step, losses[-1])
    backbone.eval()
    return SslResult(backbone, losses)
