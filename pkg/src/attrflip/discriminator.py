"""Multi-task discriminator: shared conv trunk, source head, attribute head.

The trunk's per-block activations are exposed in forward order for the
feature-matching loss; both probability heads sit on a global average pool
of the last block, so every trunk parameter serves both tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .losses import PROB_EPS

__all__ = ["DiscriminatorConfig", "DiscriminatorOutput", "Discriminator"]

# head logits are squashed through LOGIT_BOUND * tanh(l / LOGIT_BOUND) before the
# sigmoid: probabilities stay strictly inside (0, 1) and, unlike a hard clamp,
# the classification gradient never vanishes once the heads grow confident
LOGIT_BOUND = 12.0


@dataclass(frozen=True)
class DiscriminatorConfig:
    resolution: int = 32
    depth: int = 4
    base_channels: int = 16
    max_channels: int = 512

    def __post_init__(self):
        if self.resolution < 2 or self.resolution & (self.resolution - 1) != 0:
            raise ConfigError(f"resolution must be a power of two, got {self.resolution}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if 2**self.depth > self.resolution:
            raise ConfigError(
                f"2^depth ({2**self.depth}) exceeds resolution ({self.resolution})"
            )
        if self.base_channels < 1 or self.max_channels < 1:
            raise ConfigError("channel counts must be >= 1")

    def trunk_channels(self) -> list[int]:
        return [min(self.base_channels * 2**k, self.max_channels) for k in range(self.depth)]


@dataclass
class DiscriminatorOutput:
    """Per-image source probability, attribute probability, and trunk features."""

    d_s: torch.Tensor  # (N,) in (0, 1)
    d_cls: torch.Tensor  # (N,) probability that the attribute equals 1
    features: list[torch.Tensor]  # one activation map per trunk block, forward order


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        channels = config.trunk_channels()
        ins = [3] + channels[:-1]
        blocks = []
        for k in range(config.depth):
            layers: list[nn.Module] = [nn.Conv2d(ins[k], channels[k], 4, stride=2, padding=1)]
            if k > 0 and config.resolution >> (k + 1) > 1:
                layers.append(nn.InstanceNorm2d(channels[k]))
            layers.append(nn.LeakyReLU(0.2))
            blocks.append(nn.Sequential(*layers))
        self.trunk = nn.ModuleList(blocks)
        self.source_head = nn.Linear(channels[-1], 1)
        self.cls_head = nn.Linear(channels[-1], 1)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(module.weight, 0.0, 0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        r = self.config.resolution
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
            raise ShapeError(f"expected input of shape (N, 3, {r}, {r}), got {tuple(x.shape)}")
        features = []
        h = x
        for block in self.trunk:
            h = block(h)
            features.append(h)
        pooled = h.mean(dim=(2, 3))
        d_s = self._head_probability(self.source_head(pooled))
        d_cls = self._head_probability(self.cls_head(pooled))
        return DiscriminatorOutput(d_s=d_s, d_cls=d_cls, features=features)

    @staticmethod
    def _head_probability(logits: torch.Tensor) -> torch.Tensor:
        bounded = LOGIT_BOUND * torch.tanh(logits.squeeze(1) / LOGIT_BOUND)
        return torch.sigmoid(bounded).clamp(PROB_EPS, 1 - PROB_EPS)
