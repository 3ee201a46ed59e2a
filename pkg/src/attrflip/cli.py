"""Command-line surface: prepare-data, train, invert, eval, grid.

Settings resolve in three layers: command-line flags win over entries in an
optional flat key=value config file, which win over built-in defaults. Every
command validates its full configuration before touching the filesystem and
exits nonzero with a one-line ``error: <Type>: <detail>`` on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import (
    ArrayDataset,
    ImageFolderDataset,
    Manifest,
    load_attribute_table,
    load_image,
    load_manifest,
    preprocess,
    save_manifest,
    split_test,
    to_uint8,
)
from .discriminator import DiscriminatorConfig
from .errors import (
    AttributeParseError,
    CheckpointError,
    ConfigError,
    DatasetError,
    DomainError,
    MetricError,
    ShapeError,
    TrainingDivergedError,
)
from .generator import GeneratorConfig
from .losses import LossWeights
from .metrics import (
    discriminator_embedding_extractor,
    evaluate_pair,
    flatten_extractor,
    summary_record,
)
from .synthetic import make_toy_dataset
from .trainer import TrainConfig, load_checkpoint, load_generator, train

_HANDLED_ERRORS = (
    AttributeParseError,
    CheckpointError,
    ConfigError,
    DatasetError,
    DomainError,
    MetricError,
    ShapeError,
    TrainingDivergedError,
    FileNotFoundError,
    NotADirectoryError,
)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    settings: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        settings[key] = value
    return settings


def _parse_bool(raw: str) -> bool:
    lowered = str(raw).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


class Settings:
    """Flag values layered over config-file values layered over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict[str, str] = {}
        if getattr(args, "config", None):
            self.file = read_config_file(args.config)

    def get(self, key: str, parse=str, default=None, required: bool = False):
        value = getattr(self.args, key, None)
        if value is None and key in self.file:
            try:
                value = parse(self.file[key])
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {self.file[key]!r}") from None
        if value is None:
            value = default
        if value is None and required:
            raise ConfigError(f"missing required setting {key!r}")
        return value


def build_train_config(settings: Settings, attribute: str) -> TrainConfig:
    get = settings.get
    resolution = get("resolution", int, 32)
    generator = GeneratorConfig(
        resolution=resolution,
        depth=get("depth", int, 5),
        base_channels=get("base_channels", int, 16),
        max_channels=get("max_channels", int, 512),
        high_level_ratio=get("high_level_ratio", float, 0.5),
        low_level_ratio=get("low_level_ratio", float, 0.25),
        level_boundary=get("level_boundary", int),
    )
    discriminator = DiscriminatorConfig(
        resolution=resolution,
        depth=get("disc_depth", int, 4),
        base_channels=get("disc_base_channels", int, 16),
        max_channels=get("disc_max_channels", int, 512),
    )
    weights = LossWeights(
        lambda1=get("lambda1", float, 1.0),
        lambda2=get("lambda2", float, 10.0),
        lambda3=get("lambda3", float, 1.0),
        lambda4=get("lambda4", float, 1.0),
    )
    return TrainConfig(
        attribute=attribute,
        batch_size=get("batch_size", int, 16),
        steps=get("steps", int, 1000),
        lr=get("lr", float, 2e-4),
        beta1=get("beta1", float, 0.5),
        beta2=get("beta2", float, 0.999),
        seed=get("seed", int, 0),
        checkpoint_every=get("checkpoint_every", int, 500),
        log_every=get("log_every", int, 50),
        weights=weights,
        generator=generator,
        discriminator=discriminator,
    )


def _load_split_dataset(
    manifest: Manifest, split: str, dataset_dir: str | None, cache: str | None, resolution: int
):
    ids = manifest.ids_for(split)
    labels = manifest.labels_for(split)
    if not ids:
        raise DatasetError(
            f"manifest has no {split!r} rows; run the prepare-data command first"
        )
    if cache is not None:
        payload = np.load(cache, allow_pickle=False)
        index = {image_id: i for i, image_id in enumerate(payload["ids"])}
        missing = [i for i in ids if i not in index]
        if missing:
            raise DatasetError(f"cache {cache} is missing {len(missing)} ids (first: {missing[0]})")
        images = payload["images"][[index[i] for i in ids]]
        if images.shape[1] != resolution:
            raise ConfigError(
                f"cache resolution {images.shape[1]} != configured resolution {resolution}"
            )
        return ArrayDataset(images, labels, ids)
    if dataset_dir is None:
        raise ConfigError("either dataset_dir or cache must be provided")
    return ImageFolderDataset(dataset_dir, ids, labels, resolution)


def _images_to_batch(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)


def _generate(generator, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = _images_to_batch(images[start : start + batch_size])
            out.append(generator(x).permute(0, 2, 3, 1).numpy())
    return np.concatenate(out, axis=0)


def cmd_prepare_data(args: argparse.Namespace) -> int:
    settings = Settings(args)
    attribute_file = settings.get("attribute_file", str, required=True)
    dataset_dir = settings.get("dataset_dir", str, required=True)
    out_dir = Path(settings.get("out_dir", str, required=True))
    attribute = settings.get("attribute", str, required=True)
    n_per_class = settings.get("test_per_class", int, 1000)
    seed = settings.get("seed", int, 0)
    resolution = settings.get("resolution", int, 32)
    cache = settings.get("cache", _parse_bool, False)

    if not Path(attribute_file).exists():
        raise FileNotFoundError(f"attribute file {attribute_file} does not exist")
    if not Path(dataset_dir).is_dir():
        raise NotADirectoryError(f"dataset dir {dataset_dir} is not a directory")

    table = load_attribute_table(attribute_file)
    column = table.column(attribute)
    test_ids, _ = split_test(table, attribute, n_per_class, seed)
    test_set = set(test_ids)
    manifest = Manifest(attribute=attribute, seed=seed, n_test_per_class=n_per_class)
    for image_id, label in zip(table.image_ids, column):
        manifest.rows.append((image_id, int(label), "test" if image_id in test_set else "train"))

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.tsv"
    save_manifest(manifest, manifest_path)
    print(f"manifest written to {manifest_path} ({len(manifest.rows)} rows, {len(test_ids)} test)")

    if cache:
        images = np.stack(
            [preprocess(load_image(Path(dataset_dir) / i), resolution) for i in table.image_ids]
        )
        cache_path = out_dir / "cache.npz"
        np.savez_compressed(cache_path, ids=np.array(table.image_ids), images=images)
        print(f"preprocessed cache written to {cache_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = Settings(args)
    manifest_path = settings.get("manifest", str, required=True)
    dataset_dir = settings.get("dataset_dir", str)
    cache = settings.get("cache_file", str)
    out_dir = settings.get("out_dir", str, required=True)
    resume = settings.get("resume", str)

    manifest = load_manifest(manifest_path)
    attribute = settings.get("attribute", str, manifest.attribute)
    if attribute != manifest.attribute:
        raise ConfigError(
            f"attribute {attribute!r} does not match manifest attribute {manifest.attribute!r}"
        )
    config = build_train_config(settings, attribute)
    dataset = _load_split_dataset(
        manifest, "train", dataset_dir, cache, config.generator.resolution
    )
    result = train(config, dataset, out_dir, resume_from=resume, progress=print)
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"loss log: {result.log_path}")
    return 0


def cmd_invert(args: argparse.Namespace) -> int:
    settings = Settings(args)
    checkpoint = settings.get("checkpoint", str, required=True)
    out_dir = Path(settings.get("out_dir", str, required=True))
    if not args.images:
        raise ConfigError("no input images given")
    generator, config = load_generator(checkpoint)
    resolution = config.generator.resolution

    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    for image_path in args.images:
        try:
            raw = load_image(image_path)
            x = preprocess(raw, resolution)
            x1 = _generate(generator, x[None])[0]
            stem = Path(image_path).stem
            Image.fromarray(to_uint8(x1)).save(out_dir / f"{stem}_inverted.png")
            if args.cycle:
                x0 = _generate(generator, x1[None])[0]
                Image.fromarray(to_uint8(x0)).save(out_dir / f"{stem}_cycle.png")
        except Exception as exc:  # per-file robustness: report and continue
            failures.append((image_path, exc))
            print(f"error: file {image_path}: {exc}", file=sys.stderr)
    if failures:
        print(f"error: {len(failures)}/{len(args.images)} inputs failed", file=sys.stderr)
        return 1
    print(f"wrote {len(args.images) * (2 if args.cycle else 1)} images to {out_dir}")
    return 0


def _make_extractor(name: str, checkpoint: str | None):
    if name == "stub":
        return flatten_extractor()
    if name == "disc":
        if checkpoint is None:
            raise ConfigError("the 'disc' extractor needs a checkpoint")
        trainer = load_checkpoint(checkpoint)
        return discriminator_embedding_extractor(trainer.discriminator)
    raise ConfigError(f"unknown extractor {name!r}; choose from: stub, disc")


def cmd_eval(args: argparse.Namespace) -> int:
    settings = Settings(args)
    out_dir = Path(settings.get("out_dir", str, required=True))
    extractor_name = settings.get("extractor", str, "stub")
    reduce_to = settings.get("reduce_to", int)
    seed = settings.get("seed", int, 0)

    if args.self_test:
        dataset = make_toy_dataset(n_per_class=32, resolution=32, seed=seed)
        reals = dataset.images
        gens = reals.copy()
        ids = dataset.ids
        attribute = "self-test"
        extractor = flatten_extractor()
        if reduce_to is None:
            reduce_to = 32  # keeps the identity-case FID at numerical zero
    else:
        checkpoint = settings.get("checkpoint", str, required=True)
        manifest = load_manifest(settings.get("manifest", str, required=True))
        attribute = manifest.attribute
        generator, config = load_generator(checkpoint)
        dataset = _load_split_dataset(
            manifest,
            "test",
            settings.get("dataset_dir", str),
            settings.get("cache_file", str),
            config.generator.resolution,
        )
        reals = np.stack([dataset[i] for i in range(len(dataset))])
        ids = dataset.ids
        gens = _generate(generator, reals)
        extractor = _make_extractor(extractor_name, checkpoint)

    dfn, fid = evaluate_pair(reals, gens, extractor, reduce_to=reduce_to, ids=ids)
    record = summary_record(attribute, dfn, fid)

    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    ratios_path = out_dir / "dfn_ratios.tsv"
    with open(ratios_path, "w", encoding="utf-8") as fh:
        fh.write("image_id\tratio\n")
        for image_id, gamma in dfn.ratios:
            fh.write(f"{image_id}\t{gamma:.8f}\n")
    print(
        f"attribute={attribute} n={record['n']} fid={fid.value:.6f} "
        f"dfn_mean={dfn.mean:.6f} iqr={dfn.iqr:.6f}"
    )
    print(f"report: {report_path}")
    return 0


def cmd_grid(args: argparse.Namespace) -> int:
    settings = Settings(args)
    checkpoint = settings.get("checkpoint", str, required=True)
    dataset_dir = Path(settings.get("dataset_dir", str, required=True))
    out_path = Path(settings.get("out", str, required=True))
    ids = [i for i in (args.ids or "").split(",") if i]
    if not ids:
        raise ConfigError("no image ids given (use --ids id1,id2,...)")

    generator, config = load_generator(checkpoint)
    resolution = config.generator.resolution
    originals = []
    for image_id in ids:
        raw = load_image(dataset_dir / image_id)
        if raw.shape[0] != raw.shape[1]:
            raise ShapeError(
                f"image {image_id} is {raw.shape[1]}x{raw.shape[0]}, grid inputs must be square"
            )
        originals.append(preprocess(raw, resolution))
    originals = np.stack(originals)
    inverted = _generate(generator, originals)

    top = np.concatenate([to_uint8(img) for img in originals], axis=1)
    bottom = np.concatenate([to_uint8(img) for img in inverted], axis=1)
    grid = np.concatenate([top, bottom], axis=0)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(out_path)
    print(f"grid of 2x{len(ids)} tiles written to {out_path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrflip", description="Single-generator binary-attribute inversion GAN"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="parse attributes, draw the test split, write a manifest")
    _add_common(p)
    p.add_argument("--attribute-file", dest="attribute_file")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--attribute")
    p.add_argument("--test-per-class", dest="test_per_class", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--cache", action="store_const", const=True, default=None,
                   help="also write preprocessed images to cache.npz")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run the training loop")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--cache-file", dest="cache_file", help="npz cache from prepare-data --cache")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--attribute")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    for i in (1, 2, 3, 4):
        p.add_argument(f"--lambda{i}", dest=f"lambda{i}", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--max-channels", dest="max_channels", type=int)
    p.add_argument("--high-level-ratio", dest="high_level_ratio", type=float)
    p.add_argument("--low-level-ratio", dest="low_level_ratio", type=float)
    p.add_argument("--level-boundary", dest="level_boundary", type=int)
    p.add_argument("--disc-depth", dest="disc_depth", type=int)
    p.add_argument("--disc-base-channels", dest="disc_base_channels", type=int)
    p.add_argument("--disc-max-channels", dest="disc_max_channels", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("invert", help="apply the generator to image files")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--cycle", action="store_true", help="also write the reconstruction G(G(x))")
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("eval", help="compute DFN and FID over the test split")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--cache-file", dest="cache_file")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--extractor", choices=("stub", "disc"))
    p.add_argument("--reduce-to", dest="reduce_to", type=int)
    p.add_argument("--self-test", dest="self_test", action="store_true",
                   help="run the metric identity case (gen = real) without a checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="write a 2-row comparison grid (originals / inverted)")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--ids", help="comma-separated image ids")
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed % 2**32)
    try:
        return args.func(args)
    except _HANDLED_ERRORS as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
