"""U-net generator whose skip connections pass through 1x1 channel bottlenecks.

Deeper ("high-level") skips keep half their input channels, shallow
("low-level") skips a quarter, so the decoder sees mostly class-specific
content from the deep path while raw detail bypass is throttled. One
parameter set serves both translation directions: applying the network
twice is the forward-backward cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError

__all__ = ["GeneratorConfig", "skip_bottleneck_channels", "Generator"]


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 32
    depth: int = 5
    base_channels: int = 16
    max_channels: int = 512
    high_level_ratio: float = 0.5
    low_level_ratio: float = 0.25
    level_boundary: int | None = None  # levels >= boundary are high-level; None -> depth // 2

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
        for name in ("high_level_ratio", "low_level_ratio"):
            ratio = getattr(self, name)
            if not 0 < ratio <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {ratio}")
        if self.level_boundary is None:
            object.__setattr__(self, "level_boundary", self.depth // 2)
        if not 0 <= self.level_boundary <= self.depth:
            raise ConfigError(
                f"level_boundary must be in [0, {self.depth}], got {self.level_boundary}"
            )

    def encoder_channels(self) -> list[int]:
        """Output channels of each encoder block, doubling up to max_channels."""
        return [min(self.base_channels * 2**k, self.max_channels) for k in range(self.depth)]


def skip_bottleneck_channels(in_channels: int, level: int, config: GeneratorConfig) -> int:
    """Channel count of the 1x1 bottleneck on the skip at `level`.

    max(1, floor(in_channels * ratio)), where the ratio is the high-level one
    for levels at or beyond the config boundary and the low-level one below it.
    """
    if in_channels < 1:
        raise ConfigError(f"in_channels must be >= 1, got {in_channels}")
    if not 0 <= level < config.depth:
        raise ConfigError(f"level {level} out of range [0, {config.depth})")
    ratio = config.high_level_ratio if level >= config.level_boundary else config.low_level_ratio
    # tiny epsilon keeps floor() honest for ratios like 1/3 stored as floats
    return max(1, math.floor(in_channels * ratio + 1e-9))


def _encoder_block(in_ch: int, out_ch: int, normalize: bool) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)]
    if normalize:
        layers.append(nn.InstanceNorm2d(out_ch))
    layers.append(nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


def _decoder_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(),
    )


def _init_gan_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class Generator(nn.Module):
    """Encoder-decoder with gated skips; maps (N, 3, R, R) to (N, 3, R, R) in [-1, 1]."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        depth = config.depth
        enc_out = config.encoder_channels()
        enc_in = [3] + enc_out[:-1]

        # instance norm over a single spatial element collapses to zero, so the
        # block that reaches 1x1 goes unnormalized; the first block follows the
        # usual image-GAN convention of skipping norm on raw pixels
        self.encoder = nn.ModuleList(
            _encoder_block(enc_in[k], enc_out[k], normalize=k > 0 and config.resolution >> (k + 1) > 1)
            for k in range(depth)
        )

        self.skip_channels = [
            skip_bottleneck_channels(enc_out[k], k, config) for k in range(depth - 1)
        ]
        self.skips = nn.ModuleList(
            nn.Conv2d(enc_out[k], self.skip_channels[k], kernel_size=1, bias=False)
            for k in range(depth - 1)
        )

        # decoder stage j upsamples to the spatial size of encoder level j - 1;
        # stage 0 is the tanh output head
        dec_out = enc_in  # mirrored widths; stage 0 emits 3 channels
        stages: list[nn.Module] = []
        for j in range(depth):
            in_ch = enc_out[depth - 1] if j == depth - 1 else dec_out[j + 1] + self.skip_channels[j]
            if j == 0:
                stages.append(
                    nn.Sequential(nn.ConvTranspose2d(in_ch, 3, 4, stride=2, padding=1), nn.Tanh())
                )
            else:
                stages.append(_decoder_block(in_ch, dec_out[j]))
        self.decoder = nn.ModuleList(stages)

        self.apply(_init_gan_weights)

    def _check_input(self, x: torch.Tensor) -> None:
        r = self.config.resolution
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
            raise ShapeError(f"expected input of shape (N, 3, {r}, {r}), got {tuple(x.shape)}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        feats = []
        h = x
        for block in self.encoder:
            h = block(h)
            feats.append(h)
        h = feats[-1]
        for j in range(self.config.depth - 1, -1, -1):
            h = self.decoder[j](h)
            if j >= 1:
                h = torch.cat([h, self.skips[j - 1](feats[j - 1])], dim=1)
        return h

    def cycle(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Apply the same network twice: returns (inverted, reconstruction)."""
        x1 = self(x)
        x0_rec = self(x1)
        return x1, x0_rec
