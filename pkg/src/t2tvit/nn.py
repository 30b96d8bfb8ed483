"""Parameters, modules and the handful of layers every network here is built from."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class InitSpec:
    """How a parameter is drawn: ``trunc_normal`` (cut at +-2 std), ``zeros`` or ``ones``."""

    kind: str = "trunc_normal"
    std: float = 0.02

    def sample(self, shape: tuple[int, ...], rng: np.random.Generator, dtype) -> np.ndarray:
        if self.kind == "zeros":
            return np.zeros(shape, dtype=dtype)
        if self.kind == "ones":
            return np.ones(shape, dtype=dtype)
        if self.kind == "trunc_normal":
            z = rng.standard_normal(shape, dtype=np.float32 if dtype == np.float32 else np.float64)
            bad = np.abs(z) > 2.0
            while bad.any():
                z[bad] = rng.standard_normal(int(bad.sum()), dtype=z.dtype)
                bad = np.abs(z) > 2.0
            z *= self.std
            return z.astype(dtype, copy=False)
        raise ValueError(f"unknown init kind {self.kind!r}")


TRUNC_NORMAL = InitSpec("trunc_normal", 0.02)
ZEROS = InitSpec("zeros")
ONES = InitSpec("ones")


class Parameter(Tensor):
    """A trainable leaf tensor with a dotted name and a recorded init distribution."""

    def __init__(self, shape: tuple[int, ...], init: InitSpec = TRUNC_NORMAL):
        shape = tuple(int(n) for n in shape)
        if any(n < 1 for n in shape):
            raise ValueError(f"parameter extents must be positive, got {shape}")
        # zeros is lazily backed by the OS, so unmaterialized models stay cheap
        super().__init__(np.zeros(shape, dtype=T.get_default_dtype()), requires_grad=True)
        self.init = init
        self.name = ""

    def initialize(self, seed: int) -> None:
        # seeding by (model seed, name) keeps each draw independent of construction order
        rng = np.random.default_rng([seed, zlib.crc32(self.name.encode())])
        self.data = self.init.sample(self.data.shape, rng, self.data.dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, init={self.init.kind})"


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        yield from vars(self).items()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def initialize(self, seed: int) -> None:
        self.assign_names()
        for p in self.parameters():
            p.initialize(seed)

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()


class ModuleList(Module):
    def __init__(self, modules=()):
        self._items = list(modules)

    def _children(self):
        for i, m in enumerate(self._items):
            yield str(i), m

    def append(self, module: Module) -> None:
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as ``[in_features, out_features]``."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter((in_features, out_features), TRUNC_NORMAL)
        self.bias = Parameter((out_features,), ZEROS) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise T.ShapeError(f"Linear expects last extent {self.in_features}, got {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y

    def macs(self, tokens: int) -> int:
        return tokens * self.in_features * self.out_features


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.dim = dim
        self.eps = eps
        self.weight = Parameter((dim,), ONES)
        self.bias = Parameter((dim,), ZEROS)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise T.ShapeError(f"LayerNorm expects last extent {self.dim}, got {x.shape}")
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, rate: float = 0.0, seed: int = 0):
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng, self.training)
