"""Freezing policies and exact parameter accounting by canonical group."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from torch import nn

from .config import AdaptationPolicy
from .lora import LoRALinear, apply_lora
from .mofm import MixtureOfBackbones
from .network import EcgNet
from .transformer import TransformerBackbone

_EXPERT = re.compile(r"^experts\.(\d+)\.")
_BLOCK = re.compile(r"(?:^|\.)backbone\.blocks\.(\d+)\.")


def parameter_group(name: str) -> str:
    """Canonical group of a parameter name inside an :class:`EcgNet` or a mixture.

    Parameters of mixture expert ``k`` are reported as ``expert<k>:<group>``.
    """
    m = _EXPERT.match(name)
    if m:
        return f"expert{m.group(1)}:" + parameter_group("backbone." + name[m.end():])
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("lora_a", "lora_b"):
        return "lora"
    if "backbone." in name:
        rest = name.split("backbone.", 1)[1]
        if rest.startswith("conv."):
            return "conv"
        if rest.startswith(("stem.", "final_norm.")):
            return "encoder_shared"
        m = _BLOCK.search(name)
        if m:
            return f"block_{int(m.group(1))}"
        return "backbone"
    for prefix, group in (("embedder.", "tabular"), ("fusion.", "fusion"), ("head.", "head")):
        if name.startswith(prefix) or f".{prefix}" in name:
            return group
    return "other"


@dataclass
class ParamBudget:
    total: dict[str, int] = field(default_factory=dict)
    trainable: dict[str, int] = field(default_factory=dict)

    @property
    def total_trainable(self) -> int:
        return sum(self.trainable.values())

    @property
    def total_params(self) -> int:
        return sum(self.total.values())

    def group(self, name: str) -> int:
        return self.total.get(name, 0)

    def blocks(self) -> list[int]:
        keys = sorted((k for k in self.total if k.startswith("block_")), key=lambda k: int(k.split("_")[1]))
        return [self.total[k] for k in keys]

    def scaled(self, k: int) -> "ParamBudget":
        return ParamBudget({g: k * v for g, v in self.total.items()}, {g: k * v for g, v in self.trainable.items()})

    def to_dict(self) -> dict:
        return {"total": dict(self.total), "trainable": dict(self.trainable), "total_trainable": self.total_trainable}


def count_trainable(model: nn.Module) -> ParamBudget:
    budget = ParamBudget()
    for name, p in model.named_parameters():
        g = parameter_group(name)
        budget.total[g] = budget.total.get(g, 0) + p.numel()
        budget.trainable.setdefault(g, 0)
        if p.requires_grad:
            budget.trainable[g] += p.numel()
    return budget


def apply_freezing_policy(model: EcgNet, policy: AdaptationPolicy | None) -> ParamBudget:
    """Mark parameters trainable according to ``policy`` and return the budget.

    ``None`` trains everything (the scratch ResNet setting). For the
    transformer: the top ``b`` blocks train; the shared encoder parts (stem
    and final norm) train whenever ``b >= 1``; the conv front-end follows
    its flag; head, covariate embedder and fusion always train; LoRA
    adapters are inserted and trained when configured.
    """
    if policy is None:
        for p in model.parameters():
            p.requires_grad_(True)
        model.frozen_eval = []
        return count_trainable(model)
    if not model.is_transformer:
        raise ValueError("adaptation policies apply to the transformer backbone")
    for p in model.parameters():
        p.requires_grad_(False)
    for module in (model.head, model.embedder, model.fusion):
        if module is not None:
            for p in module.parameters():
                p.requires_grad_(True)
    model.frozen_eval = [f"backbone.{n}" if n else "backbone" for n in _apply_backbone_policy(model.backbone, policy)]
    model.policy = policy
    return count_trainable(model)


def _stage_name(bb: TransformerBackbone, i: int) -> str:
    stage = bb.stage(i)
    return next(n for n, m in bb.named_modules() if m is stage)


def _apply_backbone_policy(bb: TransformerBackbone, policy: AdaptationPolicy) -> list[str]:
    """Set ``requires_grad`` inside one transformer backbone; return its fully frozen stage names."""
    policy.check(len(bb.blocks))
    if policy.lora is not None and not any(isinstance(blk.attn.q, LoRALinear) for blk in bb.blocks):
        apply_lora(bb, policy.lora)
    for p in bb.parameters():
        p.requires_grad_(False)
    if policy.conv_trainable:
        for p in bb.conv.parameters():
            p.requires_grad_(True)
    L = len(bb.blocks)
    for blk in bb.blocks[L - policy.b :] if policy.b else []:
        for p in blk.parameters():
            p.requires_grad_(True)
    if policy.b >= 1:
        for module in (bb.stem, bb.final_norm):
            for p in module.parameters():
                p.requires_grad_(True)
    for name, p in bb.named_parameters():
        if parameter_group("backbone." + name) == "lora":
            p.requires_grad_(True)
    return [_stage_name(bb, i) for i in range(bb.n_stages) if not any(p.requires_grad for p in bb.stage(i).parameters())]


def apply_mofm_policy(model: MixtureOfBackbones, depths) -> ParamBudget:
    """Per-expert freezing: ``depths[k]`` is ``b`` for a transformer expert, ``None`` to train it fully."""
    if len(depths) != len(model.experts):
        raise ValueError("one depth entry per expert is required")
    for p in model.parameters():
        p.requires_grad_(True)
    frozen = []
    for k, (expert, b) in enumerate(zip(model.experts, depths)):
        if b is None:
            continue
        if not isinstance(expert, TransformerBackbone):
            raise ValueError(f"expert {k} is not a transformer; use None to train it fully")
        frozen += [f"experts.{k}.{n}" for n in _apply_backbone_policy(expert, AdaptationPolicy(b=b))]
    model.frozen_eval = frozen
    return count_trainable(model)
