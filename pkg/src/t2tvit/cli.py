"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (bad flags, config keys, geometry,
missing files), 3 runtime or numeric error (for example a non-finite loss).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .cost import count_macs, count_params
from .data import DATA_DIR_ENV, Dataset, default_data_dir, load_cifar10, synthetic_blobs
from .model import ModelConfig, T2TViT, build
from .tokenizer import SoftSplitSpec, T2TConfig, token_length_chain
from .train import NumericError, TrainConfig, evaluate, train
from .variants import NAMED, apply_variant, named_variant
from .zoo import get_config, preset_names

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---- shared helpers ------------------------------------------------------------


def resolve_model(name: str, variant: str | None = None, num_classes: int | None = None) -> ModelConfig:
    """Preset name, named variant row (e.g. ``ViT-DN``) or a base preset plus ``variant``."""
    try:
        if variant:
            cfg = apply_variant(name, variant)
        elif name.lower() in (k.lower() for k in NAMED):
            cfg = named_variant(name)
        else:
            cfg = get_config(name)
    except KeyError as e:
        raise ConfigError(e.args[0]) from None
    if num_classes is not None and num_classes != cfg.backbone.num_classes:
        cfg = cfg.replace(backbone=dataclasses.replace(cfg.backbone, num_classes=num_classes))
    return cfg


def parse_t2t_spec(text: str) -> T2TConfig:
    """``"k=7,s=3,p=2;k=3,s=1,p=1"``: one soft split per ``;``-separated entry."""
    splits = tuple(SoftSplitSpec.parse(part) for part in text.split(";") if part.strip())
    if not splits:
        raise ConfigError("empty --t2t-spec")
    return T2TConfig(splits=splits)


def _table(header: list[str], rows: list[list], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue().rstrip("\n")
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


# ---- commands ------------------------------------------------------------------


def cmd_shapes(args) -> int:
    if bool(args.model) == bool(args.t2t_spec):
        raise ConfigError("give exactly one of --model or --t2t-spec")
    if args.model:
        cfg = resolve_model(args.model, args.variant)
        model = build(cfg, materialize=False)
        size = args.input_size or cfg.image_size
        chain = model.tokenizer.geometry(size, size)
        splits = list(cfg.tokenizer.splits)
    else:
        tok = parse_t2t_spec(args.t2t_spec)
        size = args.input_size or 224
        chain = token_length_chain(size, size, tok)
        splits = list(tok.splits)
    rows = [[f"split{i}", str(s), g.h, g.w, g.length, g.token_dim] for i, (s, g) in enumerate(zip(splits, chain))]
    if args.model:
        rows.append(["backbone", "+cls", "", "", chain[-1].length + 1, cfg.token_dim])
    print(_table(["stage", "split", "h", "w", "tokens", "dim"], rows, args.format))
    return EXIT_OK


def cmd_count(args) -> int:
    cfg = resolve_model(args.model, args.variant)
    model = build(cfg, materialize=False)
    if args.params_only:
        report = count_params(model)
    else:
        report = count_macs(model, args.input_size or cfg.image_size)
    print(report.to_csv().rstrip("\n") if args.format == "csv" else report.to_text(per_layer=not args.summary))
    return EXIT_OK


def _feature_layers(model: T2TViT) -> dict[str, tuple[int, int] | None]:
    """Name -> spatial grid of every capturable layer, from a dry run on a blank image."""
    size = model.cfg.image_size
    capture: dict = {}
    with T.no_grad():
        model(np.zeros((1, size, size, model.cfg.tokenizer.in_channels), dtype=model.cls_token.dtype), capture)
    return {name: batch.spatial for name, batch in capture.items()}


def cmd_inspect(args) -> int:
    if args.checkpoint:
        cfg, meta, _ = checkpoint.read(args.checkpoint)
    elif args.model:
        cfg, meta = resolve_model(args.model, args.variant), {}
    else:
        raise ConfigError("give --model or --checkpoint")
    model = build(cfg, materialize=False)
    print(json.dumps({"config": json.loads(cfg.to_json()), "meta": meta}, indent=2, sort_keys=True))
    print(f"parameters: {model.num_parameters():,}")
    print(f"sequence length @{cfg.image_size}: {model.sequence_length(cfg.image_size)}")
    if args.layers:
        for name, spatial in _feature_layers(model).items():
            print(f"layer {name}: {'x'.join(map(str, spatial)) if spatial else 'no spatial grid'}")
    return EXIT_OK


# ---- train / eval configuration -------------------------------------------------

DATA_DEFAULTS = {"dataset": "blobs", "dir": None, "train_size": 512, "val_size": 0, "upsample": 1, "seed": 0}
TOP_KEYS = {"model", "variant", "num_classes", "train", "data", "out_dir", "checkpoint"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _reject_unknown(section: str, given: dict, allowed: set) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {section}{unknown[0]!r} in config file (allowed: {', '.join(sorted(allowed))})")


def load_run_config(path: str | None) -> dict:
    """Read a JSON run file and validate every key against the schema."""
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    _reject_unknown("", raw, TOP_KEYS)
    _reject_unknown("train.", raw.get("train", {}), TRAIN_KEYS)
    _reject_unknown("data.", raw.get("data", {}), set(DATA_DEFAULTS))
    return {
        "model": raw.get("model", "T2T-ViT-tiny"),
        "variant": raw.get("variant"),
        "num_classes": raw.get("num_classes"),
        "train": dict(raw.get("train", {})),
        "data": {**DATA_DEFAULTS, **raw.get("data", {})},
        "out_dir": raw.get("out_dir", "runs/latest"),
        "checkpoint": raw.get("checkpoint"),
    }


def apply_overrides(run: dict, args) -> dict:
    flags = {
        ("train", "epochs"): args.epochs,
        ("train", "batch_size"): args.batch_size,
        ("train", "base_lr"): args.lr,
        ("train", "seed"): args.seed,
        ("train", "precision"): args.precision,
        ("data", "dataset"): args.dataset,
        ("data", "dir"): args.data_dir,
        ("data", "train_size"): args.train_size,
        ("data", "val_size"): args.val_size,
        (None, "model"): args.model,
        (None, "out_dir"): getattr(args, "out_dir", None),
        (None, "checkpoint"): getattr(args, "checkpoint", None),
    }
    for (section, key), value in flags.items():
        if value is not None:
            (run[section] if section else run)[key] = value
    if run["data"]["dir"] is None and default_data_dir() is not None:
        run["data"]["dir"] = str(default_data_dir())
    return run


def load_datasets(data: dict, num_classes: int | None = None) -> tuple[Dataset, Dataset | None]:
    kind = data["dataset"]
    if kind == "blobs":
        train_set = synthetic_blobs(data["train_size"], seed=data["seed"])
        val = synthetic_blobs(data["val_size"], seed=data["seed"], split="val") if data["val_size"] else None
    elif kind == "cifar10":
        if not data["dir"]:
            raise ConfigError(f"cifar10 needs data.dir, --data-dir or ${DATA_DIR_ENV}")
        try:
            train_set = load_cifar10(data["dir"], "train").subset(data["train_size"])
            val = load_cifar10(data["dir"], "test").subset(data["val_size"]) if data["val_size"] else None
        except FileNotFoundError as e:
            raise ConfigError(str(e)) from None
    else:
        raise ConfigError(f"unknown dataset {kind!r}; use 'blobs' or 'cifar10'")
    if data["upsample"] != 1:
        train_set = train_set.upsample(data["upsample"])
        val = val.upsample(data["upsample"]) if val is not None else None
    return train_set, val


def _train_config(run: dict) -> TrainConfig:
    try:
        return TrainConfig(**run["train"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train section: {e}") from None


def cmd_train(args) -> int:
    run = apply_overrides(load_run_config(args.config), args)
    tcfg = _train_config(run)
    train_set, val = load_datasets(run["data"])
    cfg = resolve_model(run["model"], run["variant"], run["num_classes"] or train_set.num_classes)
    effective = {**run, "train": tcfg.to_dict(), "model_config": json.loads(cfg.to_json())}
    print("effective config: " + json.dumps(effective, sort_keys=True))
    with T.precision(tcfg.dtype):
        model = build(cfg, seed=tcfg.seed)
    history = train(model, train_set, tcfg, val, run["out_dir"], log=print)
    last = history.rows[-1] if history.rows else {}
    print(
        f"final: epochs={len(history.rows)} train_acc={last.get('train_acc', float('nan')):.4f} "
        f"train_loss={last.get('train_loss', float('nan')):.4f} best_acc={history.best_acc:.4f} "
        f"checkpoint={history.last_checkpoint}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    run = apply_overrides(load_run_config(args.config), args)
    if not run["checkpoint"]:
        raise ConfigError("eval needs --checkpoint (or 'checkpoint' in the config file)")
    print("effective config: " + json.dumps(run, sort_keys=True))
    model, _ = _load_checkpoint(run["checkpoint"])
    train_set, val = load_datasets(run["data"])
    dataset = val if val is not None else train_set
    metrics = evaluate(model, dataset, run["train"].get("batch_size", 64))
    print(f"eval: split={dataset.split} n={len(dataset)} accuracy={metrics.accuracy:.4f} loss={metrics.loss:.6f}")
    return EXIT_OK


def _load_checkpoint(path: str):
    try:
        return checkpoint.load(path)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {path} not found") from None


# ---- feature dumps -------------------------------------------------------------


def read_image(path: str | Path) -> np.ndarray:
    """``.npy`` (H x W x 3, uint8 or float in [0, 1]) or binary ``.ppm`` (P6, maxval 255)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"image {path} not found")
    if path.suffix == ".npy":
        img = np.load(path)
        img = img.astype(np.float32) / 255.0 if img.dtype == np.uint8 else img.astype(np.float32)
    elif path.suffix == ".ppm":
        img = _read_ppm(path.read_bytes())
    else:
        raise ConfigError(f"unsupported image type {path.suffix!r}; use .npy or .ppm")
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ConfigError(f"image must be H x W x 3, got {img.shape}")
    return img


def _read_ppm(raw: bytes) -> np.ndarray:
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ConfigError("only binary P6 PPM with maxval 255 is supported")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ConfigError("truncated PPM file")
    return data.reshape(h, w, 3).astype(np.float32) / 255.0


def write_pgm(path: Path, channel: np.ndarray) -> None:
    """Min-max scale to 0..255; a constant map is written as all zeros."""
    lo, hi = float(channel.min()), float(channel.max())
    scaled = np.zeros(channel.shape) if hi == lo else (channel - lo) / (hi - lo) * 255.0
    pixels = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def _parse_channels(text: str, available: int) -> list[int]:
    if text == "all":
        return list(range(available))
    try:
        chosen = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise ConfigError(f"--channels must be 'all' or comma-separated indices, got {text!r}") from None
    bad = [c for c in chosen if not 0 <= c < available]
    if bad:
        raise ConfigError(f"channels {bad} out of range for a layer with {available} channels")
    return chosen


def cmd_dump_features(args) -> int:
    if args.checkpoint:
        model, _ = _load_checkpoint(args.checkpoint)
    elif args.model:
        model = build(resolve_model(args.model, args.variant), seed=args.seed or 0)
    else:
        raise ConfigError("give --checkpoint or --model")
    image = read_image(args.image)
    capture: dict = {}
    with T.no_grad():
        model(image[None].astype(model.cls_token.dtype), capture)
    if args.layer not in capture:
        raise ConfigError(f"unknown layer {args.layer!r}; available: {', '.join(capture)}")
    batch = capture[args.layer]
    if batch.spatial is None:
        raise ConfigError(f"layer {args.layer!r} has no spatial grid to reshape onto")
    grid = batch.grid().data[0]
    channels = _parse_channels(args.channels, grid.shape[-1])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in channels:
        write_pgm(out / f"{args.layer}_{c}.pgm", grid[..., c])
    print(f"wrote {len(channels)} maps of {grid.shape[0]}x{grid.shape[1]} from {args.layer} to {out}")
    return EXIT_OK


# ---- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="t2tvit",
        description="Tokens-to-Token vision transformers: shapes, costs, training and feature dumps.",
        epilog=f"exit codes: 0 ok, 2 config error, 3 runtime/numeric error. ${DATA_DIR_ENV} sets the default data directory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p, required=False):
        p.add_argument("--model", required=required, help=f"preset or variant row, e.g. {', '.join(preset_names()[:4])}, ViT-DN")
        p.add_argument("--variant", help="apply a variant to --model (se, ghost, dense, resnext, deep-narrow, ...)")

    p = sub.add_parser("shapes", help="token-length chain of the tokenizer")
    model_flags(p)
    p.add_argument("--t2t-spec", help='soft splits, e.g. "k=7,s=3,p=2;k=3,s=1,p=1;k=3,s=1,p=1"')
    p.add_argument("--input-size", type=int)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("count", help="parameter and MAC report")
    model_flags(p, required=True)
    p.add_argument("--input-size", type=int)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--summary", action="store_true", help="totals only (text format)")
    p.add_argument("--params-only", action="store_true", help="one row per parameter tensor, no MACs")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("inspect", help="print a model or checkpoint configuration")
    model_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--layers", action="store_true", help="list capturable feature layers")
    p.set_defaults(func=cmd_inspect)

    for name, func in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name, help=f"{name} on synthetic blobs or CIFAR-10")
        p.add_argument("--config", help="JSON run file; flags override its values")
        p.add_argument("--model")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--precision", choices=("float32", "float64"))
        p.add_argument("--dataset", choices=("blobs", "cifar10"))
        p.add_argument("--data-dir")
        p.add_argument("--train-size", type=int)
        p.add_argument("--val-size", type=int)
        if name == "train":
            p.add_argument("--out-dir")
        else:
            p.add_argument("--checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("dump-features", help="write per-channel PGM maps of a layer's tokens")
    p.add_argument("--checkpoint")
    model_flags(p)
    p.add_argument("--image", required=True, help=".npy or .ppm")
    p.add_argument("--layer", required=True, help="e.g. t2t.stage1, backbone.3 (see inspect --layers)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--channels", default="0,1,2,3,4,5,6,7", help="'all' or comma-separated indices")
    p.set_defaults(func=cmd_dump_features)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, help="random seed (model init, data order)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e.args[0] if e.args else e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, MemoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
