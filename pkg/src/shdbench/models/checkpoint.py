"""Self-describing checkpoints and the adapter for external pretrained backbones."""

from __future__ import annotations

import hashlib
import logging
import os
from pathlib import Path

import torch
import yaml
from torch import nn

from .. import __version__
from .config import AdaptationPolicy, BackboneConfig, FusionConfig, LoraConfig
from .network import EcgNet
from .policy import apply_freezing_policy, parameter_group

logger = logging.getLogger(__name__)

FORMAT = "shdbench-checkpoint"
FORMAT_VERSION = 1
CHECKPOINT_ENV = "SHDBENCH_CHECKPOINT_DIR"
MAPPING_SUFFIX = ".mapping.yaml"


class CheckpointError(RuntimeError):
    pass


def state_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: EcgNet, path: str | os.PathLike, extra: dict | None = None) -> Path:
    path = Path(path)
    policy = getattr(model, "policy", None)
    payload = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "backbone_config": model.config.to_dict(),
        "fusion_config": vars(model.fusion_config).copy(),
        "policy": policy.to_dict() if policy is not None else None,
        "groups": {name: parameter_group(name) for name, _ in model.named_parameters()},
        "state_dict": model.state_dict(),
        "state_hash": state_hash(model),
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[EcgNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    model = EcgNet(BackboneConfig.from_dict(payload["backbone_config"]), FusionConfig(**payload["fusion_config"]))
    pol = payload.get("policy")
    if pol is not None:
        lora = LoraConfig(pol["lora_rank"]) if pol.get("lora_rank") else None
        apply_freezing_policy(model, AdaptationPolicy(pol["b"], pol["conv_trainable"], lora))
    model.load_state_dict(payload["state_dict"])
    if state_hash(model) != payload["state_hash"]:
        raise CheckpointError(f"{path}: parameter hash mismatch after loading")
    return model, payload


def resolve_pretrained(name_or_path: str | os.PathLike) -> Path | None:
    """Find an external checkpoint by path, or by name inside ``$SHDBENCH_CHECKPOINT_DIR``."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    root = os.environ.get(CHECKPOINT_ENV)
    if root:
        for cand in (Path(root) / p, Path(root) / f"{p}.pt", Path(root) / f"{p}.pth"):
            if cand.is_file():
                return cand
    return None


def load_pretrained_backbone(backbone: nn.Module, name_or_path, *, required: bool = False) -> bool:
    """Copy external weights into ``backbone`` through a name-mapping sidecar.

    The sidecar ``<checkpoint>.mapping.yaml`` maps external tensor names to
    backbone parameter names; without it names must already match. A
    missing checkpoint leaves the random initialisation in place with a
    warning, or raises when ``required``.
    """
    path = resolve_pretrained(name_or_path)
    if path is None:
        msg = f"pretrained checkpoint {str(name_or_path)!r} not found (set {CHECKPOINT_ENV})"
        if required:
            raise CheckpointError(msg)
        logger.warning("%s; using random initialisation", msg)
        return False
    external = torch.load(path, map_location="cpu", weights_only=False)
    if isinstance(external, dict) and "state_dict" in external:
        external = external["state_dict"]
    sidecar = path.with_name(path.name + MAPPING_SUFFIX)
    mapping = yaml.safe_load(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    own = backbone.state_dict()
    renamed = {mapping.get(k, k): v for k, v in external.items() if mapping.get(k, k) in own}
    missing = sorted(set(own) - set(renamed))
    for k, v in renamed.items():
        if tuple(v.shape) != tuple(own[k].shape):
            raise CheckpointError(f"{path.name}: tensor {k} has shape {tuple(v.shape)}, expected {tuple(own[k].shape)}")
    backbone.load_state_dict(renamed, strict=False)
    if missing:
        logger.warning("%s: %d backbone tensors not provided, left at initialisation", path.name, len(missing))
    return True
