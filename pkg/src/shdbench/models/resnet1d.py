"""ResNet-18-style 1-D encoder over the 12 leads."""

from __future__ import annotations

import torch
from torch import nn

from .config import BackboneConfig


class BasicBlock1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, stride=stride, padding=pad, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=pad, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv1d(c_in, c_out, 1, stride=stride, bias=False), nn.BatchNorm1d(c_out))

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNet1d(nn.Module):
    """Encoder returning ``(feature_map_tokens, embedding)``.

    Tokens are the last stage's feature map as ``(batch, frames, width)``;
    the embedding is the global-average-pooled map projected to ``embed_dim``.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        w = config.resnet_widths
        self.stem = nn.Sequential(
            nn.Conv1d(config.n_leads, w[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm1d(w[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool1d(3, stride=2, padding=1),
        )
        stages = []
        c_in = w[0]
        for c_out in w:
            blocks = []
            for i in range(config.resnet_blocks_per_stage):
                stride = 2 if i == 0 and c_out != c_in else 1
                blocks.append(BasicBlock1d(c_in, c_out, config.resnet_kernel, stride))
                c_in = c_out
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.proj = nn.Linear(w[-1], config.embed_dim)

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(stage[-1].conv2.out_channels for stage in self.stages)

    def forward(self, x: torch.Tensor):
        h = self.stem(x)
        for stage in self.stages:
            h = stage(h)
        tokens = h.transpose(1, 2)
        return tokens, self.proj(h.mean(dim=2))
