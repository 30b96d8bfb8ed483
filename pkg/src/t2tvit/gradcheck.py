"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, index: tuple, eps: float = 1e-5) -> float:
    old = x.data[index]
    x.data[index] = old + eps
    up = float(fn().data.sum())
    x.data[index] = old - eps
    down = float(fn().data.sum())
    x.data[index] = old
    return (up - down) / (2 * eps)


def gradient_error(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    n_coords: int = 10,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Relative error ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)`` over sampled coordinates.

    ``fn`` must return a scalar (or is summed). ``n_coords`` coordinates are drawn
    per input tensor; the norms run over all sampled coordinates together, so a
    single near-zero coordinate does not dominate.
    """
    rng = np.random.default_rng(seed)
    for x in inputs:
        x.grad = None
    out = fn()
    loss = out.sum() if out.size != 1 else out
    loss.backward()
    auto, fd = [], []
    for x in inputs:
        if x.grad is None:
            raise AssertionError(f"no gradient reached input of shape {x.shape}")
        flat = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
        for f in flat:
            index = np.unravel_index(int(f), x.shape)
            auto.append(float(x.grad[index]))
            fd.append(numeric_grad(fn, x, index, eps))
    auto, fd = np.array(auto), np.array(fd)
    scale = max(np.linalg.norm(auto), np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(auto - fd) / scale)
