"""Alternating training loop: one discriminator step, then one generator step.

The discriminator sees detached fakes and real-image attribute labels; the
generator is driven by the nonsaturating adversarial term, the inverse-label
classification term, and the two cycle-consistency terms computed on its own
double application. Batch order is a pure function of (seed, step), so a
checkpointed run resumes bit-identically.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import balanced_indices
from .discriminator import Discriminator, DiscriminatorConfig
from .errors import CheckpointError, ConfigError, DatasetError, TrainingDivergedError
from .generator import Generator, GeneratorConfig
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss,
    cls_fake_loss,
    cls_real_loss,
    discriminator_objective,
    feature_matching_loss,
    generator_adversarial_loss,
    generator_objective,
    reconstruction_loss,
)

__all__ = [
    "TrainConfig",
    "Trainer",
    "TrainResult",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "load_generator",
    "METRICS_HEADER",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
METRICS_HEADER = "step," + ",".join(LossBreakdown.FIELDS)


@dataclass(frozen=True)
class TrainConfig:
    attribute: str = "attribute"
    batch_size: int = 16
    steps: int = 1000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be >= 1")
        if self.generator.resolution != self.discriminator.resolution:
            raise ConfigError(
                f"generator resolution {self.generator.resolution} != "
                f"discriminator resolution {self.discriminator.resolution}"
            )


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(payload: dict) -> TrainConfig:
    payload = dict(payload)
    payload["weights"] = LossWeights(**payload["weights"])
    payload["generator"] = GeneratorConfig(**payload["generator"])
    payload["discriminator"] = DiscriminatorConfig(**payload["discriminator"])
    return TrainConfig(**payload)


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence((seed, epoch)).generate_state(1)[0])


class Trainer:
    """Owns the single generator, the discriminator, and their optimizers."""

    def __init__(self, config: TrainConfig, device: str = "cpu"):
        self.config = config
        self.device = torch.device(device)
        torch.manual_seed(config.seed)
        self.generator = Generator(config.generator).to(self.device)
        self.discriminator = Discriminator(config.discriminator).to(self.device)
        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr, betas=betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr, betas=betas)
        self.step = 0
        self._plan_epoch: int | None = None
        self._plan: np.ndarray | None = None

    def batch_for_step(self, dataset, step: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Deterministic batch for a global step: balanced epoch plans, sliced in order."""
        labels = np.asarray(dataset.labels)
        plan_len = 2 * max(int((labels == 1).sum()), int((labels == 0).sum()))
        per_epoch = plan_len // self.config.batch_size
        if per_epoch < 1:
            raise DatasetError(
                f"balanced epoch of {plan_len} examples cannot fill one batch of "
                f"{self.config.batch_size}"
            )
        epoch, pos = divmod(step, per_epoch)
        if self._plan_epoch != epoch:
            plan = balanced_indices(labels, _epoch_seed(self.config.seed, epoch))
            self._plan, self._plan_epoch = plan.epoch_indices, epoch
        idx = self._plan[pos * self.config.batch_size : (pos + 1) * self.config.batch_size]
        images = np.stack([dataset[int(i)] for i in idx])
        x = torch.from_numpy(images).permute(0, 3, 1, 2).to(self.device)
        c = torch.as_tensor(labels[idx], dtype=torch.float32, device=self.device)
        return x, c

    def _check_finite(self, name: str, value: torch.Tensor) -> torch.Tensor:
        if not bool(torch.isfinite(value).all()):
            raise TrainingDivergedError(f"step {self.step + 1}: loss term {name} is not finite")
        return value

    def discriminator_step(self, x: torch.Tensor, c: torch.Tensor) -> tuple[float, float, float]:
        """Update D on real images and detached fakes; returns (adv, cls_real, total_d)."""
        g, d, w = self.generator, self.discriminator, self.config.weights
        self.opt_d.zero_grad(set_to_none=True)
        with torch.no_grad():
            fake = g(x)
        out_real = d(x)
        out_fake = d(fake)
        adv = self._check_finite("adv", adversarial_loss(out_real.d_s, out_fake.d_s))
        cls_real = self._check_finite("cls_real", cls_real_loss(out_real.d_cls, c))
        loss_d = self._check_finite("total_d", discriminator_objective(adv, cls_real, w))
        loss_d.backward()
        self.opt_d.step()
        return adv.item(), cls_real.item(), loss_d.item()

    def generator_step(self, x: torch.Tensor, c: torch.Tensor) -> tuple[float, float, float, float, float]:
        """Update G through the cycle with D frozen; returns (adv_g, cls_fake, rec, fm, total_g)."""
        g, d, w = self.generator, self.discriminator, self.config.weights
        _set_requires_grad(d, False)
        try:
            self.opt_g.zero_grad(set_to_none=True)
            x1, x0_rec = g.cycle(x)
            out_x1 = d(x1)
            adv_g = self._check_finite("adv_g", generator_adversarial_loss(out_x1.d_s))
            cls_fake = self._check_finite("cls_fake", cls_fake_loss(out_x1.d_cls, c))
            rec = self._check_finite("rec", reconstruction_loss(x, x0_rec))
            with torch.no_grad():
                feats_real = d(x).features
            feats_rec = d(x0_rec).features
            fm = self._check_finite("fm", feature_matching_loss(feats_real, feats_rec))
            loss_g = self._check_finite(
                "total_g", generator_objective(adv_g, cls_fake, rec, fm, w)
            )
            loss_g.backward()
            self.opt_g.step()
        finally:
            _set_requires_grad(d, True)
        return adv_g.item(), cls_fake.item(), rec.item(), fm.item(), loss_g.item()

    def train_step(self, images: torch.Tensor, labels: torch.Tensor) -> LossBreakdown:
        """One D update, then one G update, on the same batch."""
        x = images.to(self.device)
        c = labels.to(self.device).float()
        adv, cls_real, total_d = self.discriminator_step(x, c)
        _, cls_fake, rec, fm, total_g = self.generator_step(x, c)
        self.step += 1
        return LossBreakdown(
            adv=adv,
            cls_real=cls_real,
            cls_fake=cls_fake,
            rec=rec,
            fm=fm,
            total_g=total_g,
            total_d=total_d,
        )


@dataclass
class TrainResult:
    final_checkpoint: Path
    checkpoints: list[Path]
    log_path: Path
    history: list[tuple[int, LossBreakdown]]


def save_checkpoint(trainer: Trainer, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "step": trainer.step,
            "config": config_to_dict(trainer.config),
            "generator": trainer.generator.state_dict(),
            "discriminator": trainer.discriminator.state_dict(),
            "opt_g": trainer.opt_g.state_dict(),
            "opt_d": trainer.opt_d.state_dict(),
            "torch_rng": torch.get_rng_state(),
        },
        path,
    )
    return path


def _load_payload(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"checkpoint {path} has no version tag")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} != supported {CHECKPOINT_VERSION}"
        )
    missing = {
        "step", "config", "generator", "discriminator", "opt_g", "opt_d", "torch_rng",
    } - payload.keys()
    if missing:
        raise CheckpointError(f"checkpoint {path} is missing keys: {sorted(missing)}")
    return payload


def load_checkpoint(path: str | Path, expected_config: TrainConfig | None = None) -> Trainer:
    """Rebuild a Trainer from a checkpoint; architecture must match any expected config."""
    payload = _load_payload(path)
    config = config_from_dict(payload["config"])
    if expected_config is not None:
        for part in ("generator", "discriminator"):
            saved, wanted = getattr(config, part), getattr(expected_config, part)
            if saved != wanted:
                raise CheckpointError(
                    f"checkpoint {part} config {saved} does not match expected {wanted}"
                )
    trainer = Trainer(config)
    trainer.generator.load_state_dict(payload["generator"])
    trainer.discriminator.load_state_dict(payload["discriminator"])
    trainer.opt_g.load_state_dict(payload["opt_g"])
    trainer.opt_d.load_state_dict(payload["opt_d"])
    trainer.step = int(payload["step"])
    torch.set_rng_state(payload["torch_rng"])
    return trainer


def load_generator(path: str | Path) -> tuple[Generator, TrainConfig]:
    """Load just the generator (eval mode) and its config, for inference commands."""
    payload = _load_payload(path)
    config = config_from_dict(payload["config"])
    generator = Generator(config.generator)
    generator.load_state_dict(payload["generator"])
    generator.eval()
    return generator, config


def train(
    config: TrainConfig,
    dataset,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    progress=None,
) -> TrainResult:
    """Run `config.steps` training steps with periodic checkpoints and a CSV loss log.

    `dataset` provides `labels` plus indexed access to (H, W, 3) float images
    in [-1, 1]. `progress`, when given, receives one line per logged step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        trainer = load_checkpoint(resume_from, expected_config=config)
    else:
        trainer = Trainer(config)

    log_path = out_dir / "metrics.csv"
    fresh_log = trainer.step == 0 or not log_path.exists()
    history: list[tuple[int, LossBreakdown]] = []
    checkpoints: list[Path] = []
    with open(log_path, "w" if fresh_log else "a", encoding="utf-8") as log:
        if fresh_log:
            log.write(METRICS_HEADER + "\n")
        while trainer.step < config.steps:
            images, labels = trainer.batch_for_step(dataset, trainer.step)
            breakdown = trainer.train_step(images, labels)
            step = trainer.step
            history.append((step, breakdown))
            if step % config.log_every == 0 or step == config.steps:
                row = ",".join(f"{v:.6f}" for v in breakdown.values())
                log.write(f"{step},{row}\n")
                if progress is not None:
                    progress(f"step {step}/{config.steps} " + " ".join(
                        f"{k}={v:.4f}" for k, v in zip(LossBreakdown.FIELDS, breakdown.values())
                    ))
            if step % config.checkpoint_every == 0:
                checkpoints.append(save_checkpoint(trainer, out_dir / f"ckpt_{step:06d}.pt"))
    final = save_checkpoint(trainer, out_dir / "ckpt_final.pt")
    return TrainResult(
        final_checkpoint=final, checkpoints=checkpoints, log_path=log_path, history=history
    )
