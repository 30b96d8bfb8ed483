"""Desk-scale training: AdamW with decoupled decay, warmup + cosine schedule, mixup/cutmix."""
from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import Dataset
from .model import T2TViT
from .nn import Parameter
from .tensor import Tensor

HISTORY_COLUMNS = ("epoch", "step", "lr", "train_loss", "train_acc", "val_loss", "val_acc")
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class NumericError(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: float | None = None  # None: 5% of all steps
    mixup_alpha: float = 0.0
    cutmix_alpha: float = 0.0
    augment_prob: float = 0.0
    seed: int = 0
    precision: str = "float32"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    label_smoothing: float = 0.0
    early_stop_acc: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        numbers = {
            "epochs": self.epochs,
            "base_lr": self.base_lr,
            "weight_decay": self.weight_decay,
            "mixup_alpha": self.mixup_alpha,
            "cutmix_alpha": self.cutmix_alpha,
            "augment_prob": self.augment_prob,
            "seed": self.seed,
            "eps": self.eps,
            "label_smoothing": self.label_smoothing,
        }
        if self.warmup_epochs is not None:
            numbers["warmup_epochs"] = self.warmup_epochs
        negative = [k for k, v in numbers.items() if v < 0]
        if negative:
            raise ValueError(f"must be non-negative: {', '.join(negative)}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        if self.augment_prob > 1 or self.label_smoothing >= 1:
            raise ValueError("augment_prob must be <= 1 and label_smoothing < 1")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


# ---- optimizer -------------------------------------------------------------


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: dict,
    lr: float,
    wd: float | Sequence[float],
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> dict:
    """One AdamW update, in place on ``params``.

    ``state`` holds ``step`` and the moment lists ``m``/``v``; pass ``{}`` to start.
    Weight decay multiplies the weights by ``1 - lr * wd`` before the Adam step
    and never enters the moment estimates. A ``None`` gradient counts as zero.
    """
    if not state:
        state.update(step=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    if len(state["m"]) != len(params) or len(grads) != len(params):
        raise T.ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state['m'])} state slots")
    decay = [wd] * len(params) if np.isscalar(wd) else list(wd)
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1, c2 = 1 - b1**t, 1 - b2**t
    for p, g, m, v, w in zip(params, grads, state["m"], state["v"], decay):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise T.ShapeError(f"parameter {p.shape}, gradient {None if g is None else g.shape}, moment {m.shape}")
        g = np.zeros_like(p) if g is None else g
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if w:
            p *= 1 - lr * w
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


class AdamW:
    """Stateful wrapper; biases, norm gains and 1-d tensors are not decayed."""

    def __init__(self, params: Sequence[Parameter], weight_decay: float = 0.05, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.decay = [weight_decay if p.ndim >= 2 else 0.0 for p in self.params]
        self.betas = tuple(betas)
        self.eps = eps
        self.state: dict = {}

    def step(self, lr: float) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state, lr, self.decay, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to ``base_lr`` at ``warmup_steps``, then half-cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps and step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


# ---- mixing augmentations ----------------------------------------------------


def _check_mix(x: np.ndarray, alpha: float) -> None:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if len(x) < 2:
        raise ValueError("mixing needs a batch of at least 2")


def _draw_lambda(alpha: float, rng: np.random.Generator) -> float:
    return float(rng.beta(alpha, alpha)) if alpha > 0 else 1.0


def mixup(
    x: np.ndarray, y: np.ndarray, alpha: float, rng: np.random.Generator, lam: float | None = None
) -> tuple[np.ndarray, np.ndarray, float]:
    """Blend each example with a partner from a random permutation of the batch."""
    _check_mix(x, alpha)
    lam = _draw_lambda(alpha, rng) if lam is None else lam
    perm = rng.permutation(len(x))
    if lam == 1.0:
        return x.copy(), y.copy(), 1.0
    return lam * x + (1 - lam) * x[perm], lam * y + (1 - lam) * y[perm], lam


def cutmix(
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    lam: float | None = None,
    box: tuple[int, int, int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Paste a rectangle ``(top, left, height, width)`` from a partner image.

    Without an explicit ``box`` the rectangle covers about ``1 - lam`` of the
    image at a uniform random centre, clipped to the borders. The returned
    weight is the donor's label share, i.e. the pasted area fraction.
    """
    _check_mix(x, alpha)
    n, h, w = x.shape[:3]
    perm = rng.permutation(n)
    if box is None:
        lam = _draw_lambda(alpha, rng) if lam is None else lam
        ratio = math.sqrt(1.0 - lam)
        ch, cw = int(round(h * ratio)), int(round(w * ratio))
        cy, cx = int(rng.integers(h)), int(rng.integers(w))
        top, bottom = np.clip([cy - ch // 2, cy - ch // 2 + ch], 0, h)
        left, right = np.clip([cx - cw // 2, cx - cw // 2 + cw], 0, w)
    else:
        top, left, bh, bw = box
        bottom, right = min(top + bh, h), min(left + bw, w)
    out = x.copy()
    out[:, top:bottom, left:right] = x[perm, top:bottom, left:right]
    donor = (bottom - top) * (right - left) / (h * w)
    return out, (1 - donor) * y + donor * y[perm], float(donor)


def one_hot(labels: np.ndarray, num_classes: int, smoothing: float = 0.0, dtype=np.float32) -> np.ndarray:
    out = np.full((len(labels), num_classes), smoothing / num_classes, dtype=dtype)
    out[np.arange(len(labels)), labels] += 1.0 - smoothing
    return out


# ---- loops -------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    loss: float


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    initial_loss: float = float("nan")
    best_acc: float = -1.0
    last_checkpoint: Path | None = None
    best_checkpoint: Path | None = None

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]


def _check_classes(model: T2TViT, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ValueError(f"{dataset.split} dataset is empty")
    if dataset.num_classes != model.cfg.backbone.num_classes:
        raise ValueError(f"dataset has {dataset.num_classes} classes, model head has {model.cfg.backbone.num_classes}")


def evaluate(model: T2TViT, dataset: Dataset, batch_size: int = 64) -> Metrics:
    """Top-1 accuracy and mean cross-entropy."""
    _check_classes(model, dataset)
    was_training = model.training
    model.eval()
    correct, total_loss = 0, 0.0
    dtype = model.cls_token.dtype
    with T.no_grad():
        for images, labels in dataset.batches(batch_size):
            logits = model(images.astype(dtype))
            total_loss += T.cross_entropy(logits, one_hot(labels, dataset.num_classes, dtype=dtype)).item() * len(labels)
            correct += int((logits.data.argmax(axis=-1) == labels).sum())
    model.train(was_training)
    return Metrics(correct / len(dataset), total_loss / len(dataset))


def _diagnose(model: T2TViT, epoch: int, step: int, lr: float, loss: float, last_good: float) -> str:
    bad = [name for name, p in model.named_parameters() if not np.isfinite(p.data).all()]
    largest = max((float(np.abs(p.data).max()), name) for name, p in model.named_parameters())
    return (
        f"non-finite loss {loss} at epoch {epoch} step {step} (lr={lr:.3g}, previous loss {last_good:.4g}); "
        f"largest |weight| {largest[0]:.3g} in {largest[1]}; non-finite weights: {bad or 'none'}"
    )


def train(
    model: T2TViT,
    train_set: Dataset,
    cfg: TrainConfig,
    val_set: Dataset | None = None,
    out_dir: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> History:
    """Train in place.

    Writes ``history.csv``, ``last.ckpt`` and ``best.ckpt`` (highest validation
    accuracy, or training accuracy without a validation set) into ``out_dir``.
    """
    _check_classes(model, train_set)
    if val_set is not None:
        _check_classes(model, val_set)
    dtype = cfg.dtype
    for p in model.parameters():
        p.data = p.data.astype(dtype)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history = History()
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warmup = round(0.05 * total) if cfg.warmup_epochs is None else round(cfg.warmup_epochs * steps_per_epoch)
    warmup = min(warmup, total)
    opt = AdamW(model.parameters(), cfg.weight_decay, cfg.betas, cfg.eps)
    rng = np.random.default_rng([cfg.seed, 1])
    modes = [m for m, a in (("mixup", cfg.mixup_alpha), ("cutmix", cfg.cutmix_alpha)) if a > 0]
    step, lr, last_loss = 0, 0.0, float("nan")
    meta: dict = {"seed": cfg.seed, "epoch": 0, "step": 0}
    csv_file = open(out / "history.csv", "w", newline="") if out is not None else None
    writer = csv.DictWriter(csv_file, HISTORY_COLUMNS, lineterminator="\n") if csv_file else None
    if writer:
        writer.writeheader()
    try:
        with T.precision(dtype):
            for epoch in range(1, cfg.epochs + 1):
                model.train()
                start = time.perf_counter()
                seen, correct, loss_sum = 0, 0, 0.0
                for images, labels in train_set.batches(cfg.batch_size, shuffle=True, seed=cfg.seed, epoch=epoch):
                    targets = one_hot(labels, train_set.num_classes, cfg.label_smoothing, dtype)
                    x = images.astype(dtype)
                    if modes and len(x) >= 2 and rng.random() < cfg.augment_prob:
                        mode = modes[int(rng.integers(len(modes)))]
                        if mode == "mixup":
                            x, targets, _ = mixup(x, targets, cfg.mixup_alpha, rng)
                        else:
                            x, targets, _ = cutmix(x, targets, cfg.cutmix_alpha, rng)
                    lr = cosine_lr(step + 1, total, cfg.base_lr, warmup)
                    logits = model(Tensor(x.astype(dtype)))
                    loss = T.cross_entropy(logits, targets)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NumericError(_diagnose(model, epoch, step, lr, value, last_loss))
                    if step == 0:
                        history.initial_loss = value
                    opt.zero_grad()
                    loss.backward()
                    opt.step(lr)
                    step += 1
                    last_loss = value
                    seen += len(labels)
                    loss_sum += value * len(labels)
                    correct += int((logits.data.argmax(axis=-1) == labels).sum())
                row = {
                    "epoch": epoch,
                    "step": step,
                    "lr": lr,
                    "train_loss": loss_sum / seen,
                    "train_acc": correct / seen,
                    "val_loss": "",
                    "val_acc": "",
                }
                if val_set is not None:
                    metrics = evaluate(model, val_set, cfg.batch_size)
                    row.update(val_loss=metrics.loss, val_acc=metrics.accuracy)
                history.rows.append(row)
                if writer:
                    writer.writerow({k: _fmt(v) for k, v in row.items()})
                    csv_file.flush()
                score = row["val_acc"] if val_set is not None else row["train_acc"]
                meta = {"seed": cfg.seed, "epoch": epoch, "step": step, "train_acc": row["train_acc"], "val_acc": row["val_acc"]}
                if score > history.best_acc:
                    history.best_acc = score
                    if out is not None:
                        history.best_checkpoint = out / "best.ckpt"
                        checkpoint.save(history.best_checkpoint, model, meta)
                if log:
                    shown = " ".join(f"{k}={_fmt(v)}" for k, v in row.items() if v != "")
                    log(f"{shown} time={time.perf_counter() - start:.1f}s")
                if cfg.early_stop_acc is not None and row["train_acc"] >= cfg.early_stop_acc:
                    break
    finally:
        if csv_file:
            csv_file.close()
    if out is not None:
        history.last_checkpoint = out / "last.ckpt"
        checkpoint.save(history.last_checkpoint, model, meta)
    return history


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
