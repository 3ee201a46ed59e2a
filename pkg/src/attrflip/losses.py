"""Differentiable loss terms and the composite generator/discriminator objectives.

All reductions are means over the batch (and over elements where a term is
elementwise), probabilities are clamped away from 0 and 1 before any log,
and every function is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

from .errors import ConfigError, DomainError, ShapeError

__all__ = [
    "PROB_EPS",
    "LossWeights",
    "LossBreakdown",
    "adversarial_loss",
    "generator_adversarial_loss",
    "cls_real_loss",
    "cls_fake_loss",
    "reconstruction_loss",
    "feature_matching_loss",
    "generator_objective",
    "discriminator_objective",
]

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Balance factors of the composite objectives (lambda2 weighs reconstruction)."""

    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0
    lambda4: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {getattr(self, f.name)}")


@dataclass
class LossBreakdown:
    """One training step's loss terms; `adv` is the minimax value from the D step."""

    adv: float
    cls_real: float
    cls_fake: float
    rec: float
    fm: float
    total_g: float
    total_d: float

    FIELDS = ("adv", "cls_real", "cls_fake", "rec", "fm", "total_g", "total_d")

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in self.FIELDS)


def _as_float_tensor(value, name: str) -> torch.Tensor:
    t = value if isinstance(value, torch.Tensor) else torch.as_tensor(value)
    if not t.is_floating_point():
        t = t.float()
    if t.numel() == 0:
        raise ShapeError(f"{name} is empty")
    return t


def _check_probability(t: torch.Tensor, name: str) -> torch.Tensor:
    if ((t < 0) | (t > 1)).any():
        raise DomainError(f"{name} has values outside [0, 1]")
    return t.clamp(PROB_EPS, 1 - PROB_EPS)


def _check_binary(t: torch.Tensor, name: str) -> torch.Tensor:
    if ((t != 0) & (t != 1)).any():
        raise DomainError(f"{name} must contain only 0 or 1")
    return t


def adversarial_loss(ds_real, ds_fake) -> torch.Tensor:
    """Minimax value mean[log D_s(x)] + mean[log(1 - D_s(G(x)))].

    The discriminator ascends this (its objective negates it); the generator's
    own update uses the nonsaturating variant below instead.
    """
    ds_real = _check_probability(_as_float_tensor(ds_real, "ds_real"), "ds_real")
    ds_fake = _check_probability(_as_float_tensor(ds_fake, "ds_fake"), "ds_fake")
    return torch.log(ds_real).mean() + torch.log(1 - ds_fake).mean()


def generator_adversarial_loss(ds_fake) -> torch.Tensor:
    """Nonsaturating generator term -mean[log D_s(G(x))]; same equilibrium, stronger early gradient."""
    ds_fake = _check_probability(_as_float_tensor(ds_fake, "ds_fake"), "ds_fake")
    return -torch.log(ds_fake).mean()


def cls_real_loss(dcls, c) -> torch.Tensor:
    """Binary cross-entropy of the attribute head against the true label."""
    dcls = _check_probability(_as_float_tensor(dcls, "dcls"), "dcls")
    c = _check_binary(_as_float_tensor(c, "c"), "c")
    if dcls.shape != c.shape:
        raise ShapeError(f"dcls shape {tuple(dcls.shape)} != c shape {tuple(c.shape)}")
    return -(c * torch.log(dcls) + (1 - c) * torch.log(1 - dcls)).mean()


def cls_fake_loss(dcls_fake, c) -> torch.Tensor:
    """Cross-entropy against the inverse label 1 - c; drives the generator to flip the attribute."""
    c = _check_binary(_as_float_tensor(c, "c"), "c")
    return cls_real_loss(dcls_fake, 1 - c)


def reconstruction_loss(x, x_rec) -> torch.Tensor:
    """Mean absolute difference between an image batch and its two-pass reconstruction."""
    x = _as_float_tensor(x, "x")
    x_rec = _as_float_tensor(x_rec, "x_rec")
    if x.shape != x_rec.shape:
        raise ShapeError(f"x shape {tuple(x.shape)} != x_rec shape {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def feature_matching_loss(features_a, features_b) -> torch.Tensor:
    """Sum over layers of the per-layer mean absolute activation difference.

    Each layer is normalized by its per-image element count, i.e. the layer
    term is the plain mean |a - b| over batch and elements; layer terms add.
    """
    if len(features_a) != len(features_b):
        raise ShapeError(f"feature lists differ in length: {len(features_a)} != {len(features_b)}")
    if len(features_a) == 0:
        raise ShapeError("feature lists are empty")
    total = None
    for i, (fa, fb) in enumerate(zip(features_a, features_b)):
        fa = _as_float_tensor(fa, f"features_a[{i}]")
        fb = _as_float_tensor(fb, f"features_b[{i}]")
        if fa.shape != fb.shape:
            raise ShapeError(
                f"layer {i}: shapes {tuple(fa.shape)} and {tuple(fb.shape)} differ"
            )
        term = (fa - fb).abs().mean()
        total = term if total is None else total + term
    return total


def _require_finite(value, name: str):
    finite = (
        bool(torch.isfinite(value).all()) if isinstance(value, torch.Tensor) else math.isfinite(value)
    )
    if not finite:
        raise FloatingPointError(f"loss term {name} is not finite")
    return value


def generator_objective(adv_g, cls_fake, rec, fm, weights: LossWeights):
    """adv_g + lambda1 * cls_fake + lambda2 * rec + lambda3 * fm."""
    for name, value in (("adv_g", adv_g), ("cls_fake", cls_fake), ("rec", rec), ("fm", fm)):
        _require_finite(value, name)
    return adv_g + weights.lambda1 * cls_fake + weights.lambda2 * rec + weights.lambda3 * fm


def discriminator_objective(adv, cls_real, weights: LossWeights):
    """-adv + lambda4 * cls_real; minimizing it ascends the minimax value."""
    for name, value in (("adv", adv), ("cls_real", cls_real)):
        _require_finite(value, name)
    return -adv + weights.lambda4 * cls_real
