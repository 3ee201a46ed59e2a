import json

import numpy as np
import pytest
from PIL import Image

from attrflip.cli import main
from attrflip.synthetic import write_toy_dataset

TRAIN_FLAGS = [
    "--resolution", "16", "--depth", "3", "--base-channels", "4", "--max-channels", "32",
    "--disc-depth", "3", "--disc-base-channels", "4",
    "--batch-size", "4", "--log-every", "1", "--checkpoint-every", "2",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Toy dataset on disk, a manifest, and a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    image_dir, attr_path = write_toy_dataset(root, n_per_class=6, resolution=16, seed=3)

    rc = main([
        "prepare-data",
        "--attribute-file", str(attr_path),
        "--dataset-dir", str(image_dir),
        "--out-dir", str(root / "prep"),
        "--attribute", "Square",
        "--test-per-class", "2",
        "--seed", "5",
    ])
    assert rc == 0
    manifest = root / "prep" / "manifest.tsv"

    rc = main([
        "train",
        "--manifest", str(manifest),
        "--dataset-dir", str(image_dir),
        "--out-dir", str(root / "run"),
        "--steps", "4", "--seed", "7", *TRAIN_FLAGS,
    ])
    assert rc == 0
    return {
        "root": root,
        "image_dir": image_dir,
        "attr_path": attr_path,
        "manifest": manifest,
        "checkpoint": root / "run" / "ckpt_final.pt",
        "metrics": root / "run" / "metrics.csv",
    }


# ---------------------------------------------------------------- prepare-data


def test_manifest_covers_every_row(workspace):
    lines = workspace["manifest"].read_text().splitlines()
    assert lines[1] == "image_id\tlabel\tsplit"
    rows = [ln.split("\t") for ln in lines[2:]]
    assert len(rows) == 12  # 2 * 6 toy images
    assert sum(r[2] == "test" for r in rows) == 4  # 2 per class


def test_unknown_attribute_lists_valid_names(workspace, capsys, tmp_path):
    rc = main([
        "prepare-data",
        "--attribute-file", str(workspace["attr_path"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(tmp_path),
        "--attribute", "Nope",
    ])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "Square" in err  # the valid names are listed


def test_cache_roundtrip(workspace, tmp_path):
    prep = tmp_path / "prep"
    rc = main([
        "prepare-data",
        "--attribute-file", str(workspace["attr_path"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(prep),
        "--attribute", "Square",
        "--test-per-class", "2",
        "--seed", "5",
        "--resolution", "16",
        "--cache",
    ])
    assert rc == 0
    assert (prep / "cache.npz").exists()
    rc = main([
        "train",
        "--manifest", str(prep / "manifest.tsv"),
        "--cache-file", str(prep / "cache.npz"),
        "--out-dir", str(tmp_path / "run"),
        "--steps", "2", "--seed", "7", *TRAIN_FLAGS,
    ])
    assert rc == 0
    assert (tmp_path / "run" / "ckpt_final.pt").exists()


def test_prepare_data_missing_paths(tmp_path, capsys):
    rc = main([
        "prepare-data",
        "--attribute-file", str(tmp_path / "nope.txt"),
        "--dataset-dir", str(tmp_path),
        "--out-dir", str(tmp_path / "out"),
        "--attribute", "Square",
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()  # no partial output on config error


# ---------------------------------------------------------------- train


def test_train_runs_are_reproducible(workspace, tmp_path):
    logs = []
    for name in ("a", "b"):
        rc = main([
            "train",
            "--manifest", str(workspace["manifest"]),
            "--dataset-dir", str(workspace["image_dir"]),
            "--out-dir", str(tmp_path / name),
            "--steps", "3", "--seed", "21", *TRAIN_FLAGS,
        ])
        assert rc == 0
        logs.append((tmp_path / name / "metrics.csv").read_text())
    assert logs[0] == logs[1]


def test_train_resume_continues_step_counter(workspace, tmp_path, capsys):
    rc = main([
        "train",
        "--manifest", str(workspace["manifest"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(tmp_path / "resumed"),
        "--steps", "6", "--seed", "7",
        "--resume", str(workspace["checkpoint"]),
        *TRAIN_FLAGS,
    ])
    assert rc == 0
    rows = (tmp_path / "resumed" / "metrics.csv").read_text().splitlines()
    steps = [int(r.split(",")[0]) for r in rows[1:]]
    assert steps == [5, 6]  # continues after the checkpoint's step 4


def test_train_missing_manifest(tmp_path, capsys):
    rc = main([
        "train",
        "--manifest", str(tmp_path / "absent.tsv"),
        "--dataset-dir", str(tmp_path),
        "--out-dir", str(tmp_path / "out"),
        "--steps", "1",
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_config_file_with_flag_override(workspace, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text(
        "steps = 3\nseed = 7\nresolution = 16\ndepth = 3\nbase_channels = 4\n"
        "max_channels = 32\ndisc_depth = 3\ndisc_base_channels = 4\n"
        "batch_size = 4\nlog_every = 1\ncheckpoint_every = 2\n"
    )
    rc = main([
        "train",
        "--config", str(config),
        "--manifest", str(workspace["manifest"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(tmp_path / "out"),
        "--steps", "2",  # flag wins over the file's 3
    ])
    assert rc == 0
    rows = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert [int(r.split(",")[0]) for r in rows[1:]] == [1, 2]


# ---------------------------------------------------------------- invert


def test_invert_writes_outputs(workspace, tmp_path):
    src = next(workspace["image_dir"].glob("*.png"))
    out = tmp_path / "inv"
    rc = main(["invert", "--checkpoint", str(workspace["checkpoint"]), "--out-dir", str(out), str(src)])
    assert rc == 0
    files = list(out.glob("*.png"))
    assert len(files) == 1
    with Image.open(files[0]) as img:
        assert img.size == (16, 16)


def test_invert_cycle_writes_two_files(workspace, tmp_path):
    src = next(workspace["image_dir"].glob("*.png"))
    out = tmp_path / "inv"
    rc = main([
        "invert", "--checkpoint", str(workspace["checkpoint"]), "--out-dir", str(out),
        "--cycle", str(src),
    ])
    assert rc == 0
    assert len(list(out.glob("*_inverted.png"))) == 1
    assert len(list(out.glob("*_cycle.png"))) == 1


def test_invert_skips_corrupt_file_but_continues(workspace, tmp_path, capsys):
    good = next(workspace["image_dir"].glob("*.png"))
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"this is not an image")
    out = tmp_path / "inv"
    rc = main([
        "invert", "--checkpoint", str(workspace["checkpoint"]), "--out-dir", str(out),
        str(bad), str(good),
    ])
    assert rc == 1
    err = capsys.readouterr().err
    assert "bad.png" in err
    assert len(list(out.glob("*_inverted.png"))) == 1  # the good file was still processed


# ---------------------------------------------------------------- eval


def test_eval_self_test_identity(tmp_path, capsys):
    out = tmp_path / "eval"
    rc = main(["eval", "--self-test", "--out-dir", str(out), "--seed", "3"])
    assert rc == 0
    record = json.loads((out / "report.json").read_text())
    assert abs(record["fid"]) <= 1e-5
    assert record["dfn_mean"] == pytest.approx(1.0, abs=1e-9)
    assert record["dfn_iqr"] == pytest.approx(0.0, abs=1e-9)
    for key in ("attribute", "n", "fid", "dfn_mean", "dfn_q25", "dfn_q50", "dfn_q75", "dfn_iqr"):
        assert key in record
    ratios = (out / "dfn_ratios.tsv").read_text().splitlines()
    assert ratios[0] == "image_id\tratio"
    assert len(ratios) == record["n"] + 1


def test_eval_with_checkpoint(workspace, tmp_path):
    out = tmp_path / "eval"
    rc = main([
        "eval",
        "--checkpoint", str(workspace["checkpoint"]),
        "--manifest", str(workspace["manifest"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(out),
        "--extractor", "stub",
    ])
    assert rc == 0
    record = json.loads((out / "report.json").read_text())
    assert record["attribute"] == "Square"
    assert record["n"] == 4


def test_eval_disc_extractor(workspace, tmp_path):
    rc = main([
        "eval",
        "--checkpoint", str(workspace["checkpoint"]),
        "--manifest", str(workspace["manifest"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(tmp_path / "eval"),
        "--extractor", "disc",
    ])
    assert rc == 0


def test_eval_missing_test_split_suggests_prepare(workspace, tmp_path, capsys):
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text(
        "# attribute=Square\tseed=0\tn_test_per_class=0\nimage_id\tlabel\tsplit\n"
        "toy_00000.png\t1\ttrain\n"
    )
    rc = main([
        "eval",
        "--checkpoint", str(workspace["checkpoint"]),
        "--manifest", str(manifest),
        "--dataset-dir", str(workspace["image_dir"]),
        "--out-dir", str(tmp_path / "eval"),
    ])
    assert rc == 1
    assert "prepare-data" in capsys.readouterr().err


# ---------------------------------------------------------------- grid


def test_grid_layout(workspace, tmp_path):
    ids = [p.name for p in sorted(workspace["image_dir"].glob("*.png"))[:5]]
    out = tmp_path / "grid.png"
    rc = main([
        "grid",
        "--checkpoint", str(workspace["checkpoint"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--ids", ",".join(ids),
        "--out", str(out),
    ])
    assert rc == 0
    with Image.open(out) as img:
        assert img.size == (5 * 16, 2 * 16)  # 5 columns, originals over inversions


def test_grid_requires_ids(workspace, tmp_path, capsys):
    rc = main([
        "grid",
        "--checkpoint", str(workspace["checkpoint"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--ids", "",
        "--out", str(tmp_path / "grid.png"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_grid_rejects_non_square_inputs(workspace, tmp_path, capsys):
    rect = workspace["image_dir"] / "rect.png"
    Image.fromarray(np.zeros((10, 20, 3), dtype=np.uint8)).save(rect)
    rc = main([
        "grid",
        "--checkpoint", str(workspace["checkpoint"]),
        "--dataset-dir", str(workspace["image_dir"]),
        "--ids", "rect.png",
        "--out", str(tmp_path / "grid.png"),
    ])
    assert rc == 1
    assert "square" in capsys.readouterr().err
    assert not (tmp_path / "grid.png").exists()
