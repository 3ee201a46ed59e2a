import numpy as np
import pytest
import torch

from attrflip.data import AttributeTable
from attrflip.discriminator import DiscriminatorConfig
from attrflip.generator import GeneratorConfig
from attrflip.trainer import TrainConfig


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def finite_difference_grad(f, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central finite differences of a scalar function w.r.t. every element of x."""
    grad = torch.zeros_like(x)
    flat, grad_flat = x.reshape(-1), grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = float(f(x))
            flat[i] = orig - eps
            f_minus = float(f(x))
            flat[i] = orig
            grad_flat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_grad_error(analytic: torch.Tensor, fd: torch.Tensor) -> float:
    denom = max(float(fd.norm()), 1e-12)
    return float((analytic - fd).norm()) / denom


@pytest.fixture
def tiny_gen_config():
    return GeneratorConfig(resolution=16, depth=3, base_channels=4, max_channels=32)


@pytest.fixture
def tiny_disc_config():
    return DiscriminatorConfig(resolution=16, depth=3, base_channels=4, max_channels=32)


@pytest.fixture
def tiny_train_config(tiny_gen_config, tiny_disc_config):
    return TrainConfig(
        attribute="Square",
        batch_size=4,
        steps=4,
        seed=11,
        checkpoint_every=2,
        log_every=1,
        generator=tiny_gen_config,
        discriminator=tiny_disc_config,
    )


def random_table(rng: np.random.Generator, n_rows: int, n_attrs: int = 4) -> AttributeTable:
    names = [f"Attr_{j}" for j in range(n_attrs)]
    ids = [f"{i:06d}.jpg" for i in range(n_rows)]
    labels = rng.integers(0, 2, size=(n_rows, n_attrs), dtype=np.uint8)
    return AttributeTable(names=names, image_ids=ids, labels=labels)


@pytest.fixture
def table_3pos_9neg():
    labels = np.zeros((12, 1), dtype=np.uint8)
    labels[:3, 0] = 1
    return AttributeTable(
        names=["Thing"],
        image_ids=[f"{i:06d}.jpg" for i in range(12)],
        labels=labels,
    )
