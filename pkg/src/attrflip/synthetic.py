"""Synthetic square-attribute dataset for desk-scale end-to-end runs.

Each image is a flat random background color; the binary attribute is a
white square in the top-left corner. The attribute occupies a fixed region,
so edit locality (change inside vs outside the square) is directly
measurable, and the cycle has to restore the per-image color.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import ArrayDataset, AttributeTable, save_attribute_table, to_uint8

__all__ = [
    "SQUARE_SIZE",
    "ATTRIBUTE_NAME",
    "square_mask",
    "make_toy_dataset",
    "write_toy_dataset",
    "evaluate_toy",
]

SQUARE_SIZE = 8
ATTRIBUTE_NAME = "Square"


def square_mask(resolution: int) -> np.ndarray:
    """Boolean (resolution, resolution) mask of the attribute region."""
    mask = np.zeros((resolution, resolution), dtype=bool)
    mask[:SQUARE_SIZE, :SQUARE_SIZE] = True
    return mask


def _random_background(rng: np.random.Generator, resolution: int) -> np.ndarray:
    # colors stay below mid-gray so the white square is unambiguous
    color = rng.uniform(-1.0, 0.4, size=3)
    return np.broadcast_to(color, (resolution, resolution, 3)).astype(np.float32)


def make_toy_dataset(n_per_class: int = 512, resolution: int = 32, seed: int = 0) -> ArrayDataset:
    """Balanced in-memory dataset: n_per_class squares and n_per_class plain gradients."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    images = np.empty((n, resolution, resolution, 3), dtype=np.float32)
    labels = np.zeros(n, dtype=np.uint8)
    labels[:n_per_class] = 1
    for i in range(n):
        images[i] = _random_background(rng, resolution)
        if labels[i]:
            images[i, :SQUARE_SIZE, :SQUARE_SIZE, :] = 1.0
    ids = [f"toy_{i:05d}.png" for i in range(n)]
    return ArrayDataset(images, labels, ids)


def write_toy_dataset(
    out_dir: str | Path, n_per_class: int = 512, resolution: int = 32, seed: int = 0
) -> tuple[Path, Path]:
    """Write the toy dataset as PNGs plus a CelebA-layout attribute file."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    dataset = make_toy_dataset(n_per_class, resolution, seed)
    for i, image_id in enumerate(dataset.ids):
        Image.fromarray(to_uint8(dataset.images[i])).save(image_dir / image_id)
    table = AttributeTable(
        names=[ATTRIBUTE_NAME],
        image_ids=dataset.ids,
        labels=dataset.labels.reshape(-1, 1),
    )
    attr_path = out_dir / "attributes.txt"
    save_attribute_table(table, attr_path)
    return image_dir, attr_path


def evaluate_toy(generator, discriminator, dataset, n: int = 256, batch_size: int = 64) -> dict:
    """Score a trained pair on the toy task.

    Returns inverse-label classification accuracy of D on G(x), mean L1
    reconstruction error of the cycle, and the mean pixel change of G inside
    vs outside the square region (locality_ratio = outside / inside).
    """
    import torch

    labels = np.asarray(dataset.labels)
    per_class = n // 2
    idx = np.concatenate(
        [np.flatnonzero(labels == 1)[:per_class], np.flatnonzero(labels == 0)[:per_class]]
    )
    mask = square_mask(dataset[0].shape[0])

    generator.eval()
    discriminator.eval()
    correct = 0
    rec_sum = 0.0
    inside_sum = 0.0
    outside_sum = 0.0
    total = 0
    with torch.no_grad():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start : start + batch_size]
            x_np = np.stack([dataset[int(i)] for i in chunk])
            x = torch.from_numpy(x_np).permute(0, 3, 1, 2)
            c = torch.as_tensor(labels[chunk], dtype=torch.float32)
            x1 = generator(x)
            x0_rec = generator(x1)
            pred = (discriminator(x1).d_cls > 0.5).float()
            correct += int((pred == 1 - c).sum())
            rec_sum += float((x - x0_rec).abs().sum())
            change = (x1 - x).abs().permute(0, 2, 3, 1).numpy()
            inside_sum += float(change[:, mask].sum())
            outside_sum += float(change[:, ~mask].sum())
            total += len(chunk)
    n_pixels = mask.size
    n_inside = int(mask.sum())
    inside = inside_sum / (total * n_inside * 3)
    outside = outside_sum / (total * (n_pixels - n_inside) * 3)
    return {
        "inverse_cls_accuracy": correct / total,
        "reconstruction_l1": rec_sum / (total * n_pixels * 3),
        "inside_change": inside,
        "outside_change": outside,
        "locality_ratio": outside / max(inside, 1e-12),
    }
