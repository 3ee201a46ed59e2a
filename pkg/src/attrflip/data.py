"""CelebA-format attribute ingestion, preprocessing, and balanced sampling.

The attribute-list layout is the stock CelebA one: first line holds the row
count, second line the attribute names, and each following line an image
filename followed by one -1/1 token per attribute. Labels are held as {0,1}
internally so the inverse label is just ``1 - c``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AttributeParseError, ConfigError, DatasetError, ShapeError

__all__ = [
    "AttributeTable",
    "SamplerPlan",
    "Manifest",
    "load_attribute_table",
    "format_attribute_table",
    "save_attribute_table",
    "preprocess",
    "load_image",
    "to_uint8",
    "balanced_indices",
    "make_balanced_sampler",
    "split_test",
    "save_manifest",
    "load_manifest",
    "ArrayDataset",
    "ImageFolderDataset",
]


@dataclass
class AttributeTable:
    """Ordered attribute names plus one {0,1} label row per image."""

    names: list[str]
    image_ids: list[str]
    labels: np.ndarray  # (n_rows, n_names) uint8, entries in {0, 1}

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2 or self.labels.shape != (len(self.image_ids), len(self.names)):
            raise ShapeError(
                f"label matrix {self.labels.shape} does not match "
                f"{len(self.image_ids)} rows x {len(self.names)} attributes"
            )
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError("image ids must be unique")

    def __len__(self):
        return len(self.image_ids)

    def attribute_index(self, attribute: str | int) -> int:
        """Resolve an attribute name or index; unknown names list the valid ones."""
        if isinstance(attribute, int):
            if not 0 <= attribute < len(self.names):
                raise ConfigError(f"attribute index {attribute} out of range [0, {len(self.names)})")
            return attribute
        try:
            return self.names.index(attribute)
        except ValueError:
            raise ConfigError(
                f"unknown attribute {attribute!r}; valid names: {', '.join(self.names)}"
            ) from None

    def column(self, attribute: str | int) -> np.ndarray:
        return self.labels[:, self.attribute_index(attribute)]


def load_attribute_table(path: str | os.PathLike) -> AttributeTable:
    """Parse a CelebA-style attribute list into an AttributeTable.

    Values -1 map to 0 and 1 maps to 1; row order is preserved. Malformed
    input raises AttributeParseError naming the offending line (1-based).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise AttributeParseError("line 1: expected the row count, got empty input")
    try:
        n_rows = int(lines[0].strip())
    except ValueError:
        raise AttributeParseError(f"line 1: expected an integer row count, got {lines[0].strip()!r}") from None
    if n_rows < 0:
        raise AttributeParseError(f"line 1: row count must be non-negative, got {n_rows}")
    if len(lines) < 2:
        raise AttributeParseError("line 2: expected attribute names, got end of file")
    names = lines[1].split()
    if not names:
        raise AttributeParseError("line 2: expected at least one attribute name")

    body = [ln for ln in lines[2:] if ln.strip()]
    if len(body) != n_rows:
        raise AttributeParseError(
            f"line 1: declared {n_rows} rows but file has {len(body)} data lines"
        )

    image_ids: list[str] = []
    labels = np.empty((n_rows, len(names)), dtype=np.uint8)
    for i, line in enumerate(body):
        lineno = i + 3
        tokens = line.split()
        if len(tokens) != len(names) + 1:
            raise AttributeParseError(
                f"line {lineno}: expected image id + {len(names)} values, got {len(tokens)} tokens"
            )
        image_ids.append(tokens[0])
        for j, tok in enumerate(tokens[1:]):
            if tok == "1":
                labels[i, j] = 1
            elif tok == "-1":
                labels[i, j] = 0
            else:
                raise AttributeParseError(f"line {lineno}: value {tok!r} is not -1 or 1")
    if len(set(image_ids)) != n_rows:
        dupes = {x for x in image_ids if image_ids.count(x) > 1}
        raise AttributeParseError(f"duplicate image ids: {sorted(dupes)[:5]}")
    return AttributeTable(names=names, image_ids=image_ids, labels=labels)


def format_attribute_table(table: AttributeTable) -> str:
    """Serialize back to the CelebA layout (0 -> -1, 1 -> 1)."""
    lines = [str(len(table)), " ".join(table.names)]
    for image_id, row in zip(table.image_ids, table.labels):
        values = " ".join("1" if v else "-1" for v in row)
        lines.append(f"{image_id} {values}")
    return "\n".join(lines) + "\n"


def save_attribute_table(table: AttributeTable, path: str | os.PathLike) -> None:
    Path(path).write_text(format_attribute_table(table), encoding="utf-8")


def _check_resolution(resolution: int) -> None:
    if resolution < 8 or resolution & (resolution - 1) != 0:
        raise ConfigError(f"resolution must be a power of two >= 8, got {resolution}")


def preprocess(raw_image: np.ndarray, resolution: int) -> np.ndarray:
    """Center square crop, bilinear resize, and map pixels to [-1, 1].

    `raw_image` is an (H, W, 3) integer image with values in [0, 255]; the
    crop keeps the center min(H, W) square (for aligned CelebA 178x218 that
    is the middle 178x178 region). Returns float32 (resolution, resolution, 3).
    """
    _check_resolution(resolution)
    img = np.asarray(raw_image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ShapeError(f"image has empty spatial dims {img.shape}")
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = img[top : top + side, left : left + side]
    pil = Image.fromarray(crop.astype(np.uint8), mode="RGB")
    pil = pil.resize((resolution, resolution), resample=Image.BILINEAR)
    arr = np.asarray(pil, dtype=np.float32)
    return arr / 127.5 - 1.0


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a raster file as an (H, W, 3) uint8 array."""
    with Image.open(path) as pil:
        return np.asarray(pil.convert("RGB"))


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] float image back to uint8 pixels."""
    arr = np.clip((np.asarray(image, dtype=np.float32) + 1.0) * 127.5, 0, 255)
    return np.round(arr).astype(np.uint8)


@dataclass
class SamplerPlan:
    """One epoch of class-balanced row indices."""

    epoch_indices: np.ndarray
    per_class_counts: dict[int, int]


def balanced_indices(labels: np.ndarray, seed: int) -> SamplerPlan:
    """Oversample the minority class of a {0,1} label vector to parity.

    Majority indices appear exactly once; every minority index appears at
    least once, topped up by seeded draws with replacement. The combined
    list is shuffled with the same seed, so the plan is a pure function of
    (labels, seed).
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DatasetError(
            f"cannot balance: class counts are {len(neg)} negative / {len(pos)} positive"
        )
    rng = np.random.default_rng(seed)
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    extra = rng.choice(minority, size=len(majority) - len(minority), replace=True)
    combined = np.concatenate([majority, minority, extra])
    rng.shuffle(combined)
    counts = {
        0: int((labels[combined] == 0).sum()),
        1: int((labels[combined] == 1).sum()),
    }
    return SamplerPlan(epoch_indices=combined, per_class_counts=counts)


def make_balanced_sampler(table: AttributeTable, attribute: str | int, seed: int) -> SamplerPlan:
    """Balanced epoch plan over a table for one attribute; errors name it."""
    column = table.column(attribute)
    try:
        return balanced_indices(column, seed)
    except DatasetError as exc:
        raise DatasetError(f"attribute {attribute!r}: {exc}") from None


def split_test(
    table: AttributeTable, attribute: str | int, n_per_class: int, seed: int
) -> tuple[list[str], list[str]]:
    """Draw a fixed per-class test split; remaining rows form the train set.

    Selection is a seeded permutation within each class, so the split is
    deterministic per seed and test/train ids are disjoint by construction.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    column = table.column(attribute)
    rng = np.random.default_rng(seed)
    test_rows: list[int] = []
    for cls in (0, 1):
        rows = np.flatnonzero(column == cls)
        if len(rows) < n_per_class:
            raise DatasetError(
                f"class {cls} of attribute {attribute!r} has only {len(rows)} rows, "
                f"need {n_per_class}"
            )
        test_rows.extend(rng.permutation(rows)[:n_per_class].tolist())
    test_set = set(test_rows)
    test_ids = [table.image_ids[i] for i in sorted(test_rows)]
    train_ids = [table.image_ids[i] for i in range(len(table)) if i not in test_set]
    return test_ids, train_ids


@dataclass
class Manifest:
    """Output of data preparation: per-image label and train/test assignment."""

    attribute: str
    seed: int
    n_test_per_class: int
    rows: list[tuple[str, int, str]] = field(default_factory=list)  # (image_id, label, split)

    def ids_for(self, split: str) -> list[str]:
        return [r[0] for r in self.rows if r[2] == split]

    def labels_for(self, split: str) -> np.ndarray:
        return np.array([r[1] for r in self.rows if r[2] == split], dtype=np.uint8)


def save_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    lines = [
        f"# attribute={manifest.attribute}\tseed={manifest.seed}"
        f"\tn_test_per_class={manifest.n_test_per_class}",
        "image_id\tlabel\tsplit",
    ]
    for image_id, label, split in manifest.rows:
        lines.append(f"{image_id}\t{label}\t{split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | os.PathLike) -> Manifest:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith("#"):
        raise DatasetError(f"{path}: not a manifest file")
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split("\t"))
    manifest = Manifest(
        attribute=meta["attribute"],
        seed=int(meta["seed"]),
        n_test_per_class=int(meta["n_test_per_class"]),
    )
    for line in lines[2:]:
        if not line.strip():
            continue
        image_id, label, split = line.split("\t")
        manifest.rows.append((image_id, int(label), split))
    return manifest


class ArrayDataset:
    """In-memory dataset: images (n, H, W, 3) float32 in [-1, 1] plus labels."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, ids: list[str] | None = None):
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.uint8)
        if self.images.ndim != 4 or self.images.shape[0] != len(self.labels):
            raise ShapeError(
                f"images {self.images.shape} do not match {len(self.labels)} labels"
            )
        self.ids = ids if ids is not None else [f"{i:06d}" for i in range(len(self.labels))]

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.images[i]


class ImageFolderDataset:
    """Dataset backed by raster files in a directory, preprocessed on load.

    With ``preload=True`` (the default) every image is decoded once at
    construction, which is the right trade at desk scale; pass False to
    re-read from disk per access.
    """

    def __init__(
        self,
        image_dir: str | os.PathLike,
        ids: list[str],
        labels: np.ndarray,
        resolution: int,
        preload: bool = True,
    ):
        _check_resolution(resolution)
        if len(ids) != len(labels):
            raise ShapeError(f"{len(ids)} ids do not match {len(labels)} labels")
        self.image_dir = Path(image_dir)
        self.ids = list(ids)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.resolution = resolution
        self._cache: np.ndarray | None = None
        if preload:
            self._cache = np.stack([self._read(i) for i in range(len(ids))]) if ids else np.empty(
                (0, resolution, resolution, 3), dtype=np.float32
            )

    def _read(self, i: int) -> np.ndarray:
        return preprocess(load_image(self.image_dir / self.ids[i]), self.resolution)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i: int) -> np.ndarray:
        if self._cache is not None:
            return self._cache[i]
        return self._read(i)
