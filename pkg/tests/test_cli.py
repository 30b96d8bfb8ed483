import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from t2tvit import checkpoint
from t2tvit.cli import main, write_pgm
from t2tvit.model import build
from t2tvit.zoo import tiny


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_pgm(path):
    raw = path.read_bytes()
    header, _, rest = raw.partition(b"\n255\n")
    magic, dims = header.split(b"\n")
    w, h = map(int, dims.split())
    assert magic == b"P5"
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def test_shapes_model_chain(capsys):
    code, out, _ = run(capsys, "shapes", "--model", "t2t-vit-14", "--input-size", "224", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert [int(r["tokens"]) for r in rows] == [3136, 784, 196, 197]
    assert rows[2]["tokens"] == "196"


def test_shapes_spec_and_resolution(capsys):
    code, out, _ = run(capsys, "shapes", "--t2t-spec", "k=1,s=0,p=0", "--input-size", "8", "--format", "csv")
    assert code == 0 and list(csv.DictReader(io.StringIO(out)))[-1]["tokens"] == "64"
    _, out, _ = run(capsys, "shapes", "--model", "t2t-vit-14", "--input-size", "384", "--format", "csv")
    assert list(csv.DictReader(io.StringIO(out)))[-2]["tokens"] == "576"


def test_shapes_invalid_geometry_exit_code(capsys):
    code, _, err = run(capsys, "shapes", "--t2t-spec", "k=9,s=0,p=0", "--input-size", "4")
    assert code == 2 and "larger" in err
    code, _, _ = run(capsys, "shapes", "--t2t-spec", "k=3,s=3,p=0")
    assert code == 2


@pytest.mark.parametrize("name,params,macs", [("t2t-vit-14", 21.5e6, 4.8e9), ("t2t-vit-24", 64.1e6, 13.8e9)])
def test_count_bands(capsys, name, params, macs):
    code, out, _ = run(capsys, "count", "--model", name, "--format", "csv")
    total = list(csv.DictReader(io.StringIO(out)))[-1]
    assert code == 0 and total["name"] == "total"
    assert abs(int(total["params"]) / params - 1) < 0.03
    assert abs(int(total["macs"]) / macs - 1) < 0.10


def test_count_toy_model_exact(capsys, tmp_path):
    # hard 16x16 split on a 16x16 image: one patch token plus the class token
    code, out, _ = run(capsys, "count", "--model", "ViT-B/16", "--variant", "deep-narrow", "--format", "csv", "--input-size", "16")
    assert code == 0
    rows = {r["name"]: r for r in csv.DictReader(io.StringIO(out))}
    d, mlp, l = 384, 1152, 2
    assert int(rows["blocks.0"]["params"]) == 4 * d * d + 4 * d + 2 * d * mlp + d + mlp + 4 * d
    assert int(rows["blocks.0"]["macs"]) == l * d * 3 * d + 2 * l * l * d + l * d * d + 2 * l * d * mlp
    assert int(rows["t2t.project"]["macs"]) == 1 * 768 * d
    assert int(rows["head"]["macs"]) == d * 1000


def test_count_variant_and_unknown(capsys):
    code, out, _ = run(capsys, "count", "--model", "ViT-DN", "--summary")
    assert code == 0 and "total params" in out
    code, _, err = run(capsys, "count", "--model", "T2T-ViT-14", "--variant", "nope")
    assert code == 2 and "nope" in err


def test_train_eval_cycle(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1, "batch_size": 16}, "data": {"train_size": 32, "val_size": 16}}))
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--out-dir", str(out_dir), "--seed", "2", "--epochs", "2")
    assert code == 0
    first = out.splitlines()[0]
    assert first.startswith("effective config: ")
    effective = json.loads(first.split(": ", 1)[1])
    assert effective["train"]["epochs"] == 2 and effective["train"]["seed"] == 2
    assert (out_dir / "history.csv").read_text().splitlines()[0] == "epoch,step,lr,train_loss,train_acc,val_loss,val_acc"
    code, out, _ = run(capsys, "eval", "--config", str(cfg), "--checkpoint", str(out_dir / "last.ckpt"))
    assert code == 0 and "accuracy=" in out.splitlines()[-1]


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochz": 3}}))
    code, _, err = run(capsys, "train", "--config", str(bad))
    assert code == 2 and "epochz" in err
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "missing.json"))
    assert code == 2
    code, _, err = run(capsys, "train", "--dataset", "cifar10", "--data-dir", str(tmp_path / "none"))
    assert code == 2 and "missing" in err
    code, _, _ = run(capsys, "eval")
    assert code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--lr", "1e30", "--epochs", "3", "--train-size", "64", "--out-dir", str(tmp_path))
    assert code == 3 and "non-finite" in err


def test_dump_features_t2t_stage(capsys, tmp_path):
    img = tmp_path / "img.npy"
    np.save(img, (np.random.default_rng(0).random((224, 224, 3)) * 255).astype(np.uint8))
    code, _, _ = run(capsys, "dump-features", "--model", "T2T-ViT-14", "--image", str(img), "--layer", "t2t.stage1", "--out-dir", str(tmp_path / "f"), "--channels", "0,3")
    assert code == 0
    maps = sorted(p.name for p in (tmp_path / "f").iterdir())
    assert maps == ["t2t.stage1_0.pgm", "t2t.stage1_3.pgm"]
    pixels = read_pgm(tmp_path / "f" / "t2t.stage1_3.pgm")
    assert pixels.shape == (56, 56) and pixels.min() == 0 and pixels.max() == 255


def test_dump_features_backbone_and_errors(capsys, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    checkpoint.save(ckpt, build("T2T-ViT-7", seed=1))
    img = tmp_path / "img.npy"
    np.save(img, np.random.default_rng(1).random((224, 224, 3)).astype(np.float32))
    code, _, _ = run(capsys, "dump-features", "--checkpoint", str(ckpt), "--image", str(img), "--layer", "backbone.2", "--out-dir", str(tmp_path / "f"), "--channels", "7")
    assert code == 0 and read_pgm(tmp_path / "f" / "backbone.2_7.pgm").shape == (14, 14)
    code, _, err = run(capsys, "dump-features", "--checkpoint", str(ckpt), "--image", str(img), "--layer", "head", "--out-dir", str(tmp_path / "f"))
    assert code == 2 and "spatial" in err
    code, _, err = run(capsys, "dump-features", "--checkpoint", str(ckpt), "--image", str(img), "--layer", "t2t.stage9", "--out-dir", str(tmp_path / "f"))
    assert code == 2 and "t2t.stage1" in err


def test_dump_features_constant_image_zero_weights(capsys, tmp_path):
    ckpt = tmp_path / "zero.ckpt"
    checkpoint.save(ckpt, build(tiny(), materialize=False))
    ppm = tmp_path / "grey.ppm"
    ppm.write_bytes(b"P6\n# grey\n32 32\n255\n" + bytes([90]) * (32 * 32 * 3))
    code, _, _ = run(capsys, "dump-features", "--checkpoint", str(ckpt), "--image", str(ppm), "--layer", "t2t.stage1", "--out-dir", str(tmp_path / "f"), "--channels", "all")
    assert code == 0
    maps = list((tmp_path / "f").iterdir())
    assert len(maps) == 32
    for path in maps:
        pixels = read_pgm(path)
        assert pixels.shape == (16, 16) and (pixels == pixels[0, 0]).all()


def test_pgm_min_max(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.array([[-1.0, 0.0], [1.0, 3.0]]))
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), [[0, 64], [128, 255]])


def test_inspect_and_module_entry_point(capsys, tmp_path):
    code, out, _ = run(capsys, "inspect", "--model", "T2T-ViT-14", "--layers")
    assert code == 0 and "layer t2t.stage1: 56x56" in out and "layer backbone.13: 14x14" in out
    proc = subprocess.run([sys.executable, "-m", "t2tvit", "count", "--model", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2 and "unknown model" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "t2tvit", "shapes", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_commands_deterministic_given_seed(capsys, tmp_path):
    img = tmp_path / "img.npy"
    np.save(img, np.random.default_rng(0).random((32, 32, 3)).astype(np.float32))
    outputs = []
    for name in ("a", "b"):
        run(capsys, "dump-features", "--model", "T2T-ViT-tiny", "--seed", "5", "--image", str(img), "--layer", "backbone.1", "--out-dir", str(tmp_path / name), "--channels", "0")
        outputs.append((tmp_path / name / "backbone.1_0.pgm").read_bytes())
    assert outputs[0] == outputs[1]
