"""Transformer layers: multi-head self-attention, MLP, pre-LN residual blocks.

Attention comes in two backends. ``standard`` materializes the full
``l x l`` softmax weights. ``performer`` approximates the softmax kernel
``exp(q.k / sqrt(dh))`` with positive random features

    phi(x) = exp(W x - |x|^2 / 2) / sqrt(m),    W ~ N(0, I)  (m x dh)

applied to ``q`` and ``k`` pre-scaled by ``dh ** -0.25``. Output is
``phi(Q) (phi(K)^T V) / (phi(Q) phi(K)^T 1)``, linear in ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ONES, ZEROS, LayerNorm, Linear, Module, Parameter
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionBackend:
    kind: str = "standard"
    num_features: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("standard", "performer"):
            raise ValueError(f"unknown attention backend {self.kind!r}")
        if self.kind == "performer" and self.num_features < 1:
            raise ValueError(f"performer needs num_features >= 1, got {self.num_features}")

    @classmethod
    def standard(cls) -> "AttentionBackend":
        return cls("standard")

    @classmethod
    def performer(cls, num_features: int, seed: int = 0) -> "AttentionBackend":
        return cls("performer", num_features, seed)

    def reseeded(self, offset: int) -> "AttentionBackend":
        return AttentionBackend(self.kind, self.num_features, self.seed + offset)


@dataclass(frozen=True)
class TransformerLayerConfig:
    """One pre-LN transformer layer.

    ``in_dim`` differs from ``hidden_dim`` only for tokenizer layers whose
    input tokens are wider than the attention width. The Q/K/V projection then
    maps ``in_dim -> hidden_dim`` and the attention residual runs through the
    projected values instead of the raw input.
    """

    hidden_dim: int
    mlp_size: int
    num_heads: int = 1
    attention: AttentionBackend = AttentionBackend()
    in_dim: int | None = None
    dropout: float = 0.0

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_heads < 1:
            raise ValueError("hidden_dim and num_heads must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.mlp_size < 1:
            raise ValueError(f"mlp_size must be >= 1, got {self.mlp_size}")
        if self.in_dim is not None and self.in_dim < 1:
            raise ValueError(f"in_dim must be positive, got {self.in_dim}")

    @property
    def input_dim(self) -> int:
        return self.hidden_dim if self.in_dim is None else self.in_dim


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    *lead, l, d = x.shape
    return x.reshape(*lead, l, num_heads, d // num_heads).swapaxes(-2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, l, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, l, h * dh)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    scale = q.shape[-1] ** -0.5
    return T.softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)


def softmax_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    return attention_weights(q, k) @ v


def random_features(num_features: int, head_dim: int, seed: int) -> np.ndarray:
    """Gaussian projection ``[head_dim, m]``, bit-identical for a given seed."""
    if num_features < 1:
        raise ValueError(f"num_features must be >= 1, got {num_features}")
    return np.random.default_rng(seed).standard_normal((head_dim, num_features))


def positive_features(x: Tensor, projection: np.ndarray, per_row: bool) -> Tensor:
    m = projection.shape[-1]
    logits = x @ projection - (x * x).sum(axis=-1, keepdims=True) * 0.5
    # stabilizer is a constant shift that cancels between numerator and denominator
    if per_row:
        shift = logits.data.max(axis=-1, keepdims=True)
    else:
        shift = logits.data.max(axis=(-2, -1), keepdims=True)
    return T.exp(logits - shift) * (m**-0.5)


def performer_attention(q: Tensor, k: Tensor, v: Tensor, projection: np.ndarray) -> Tensor:
    """Random-feature approximation of ``softmax_attention`` for ``[..., l, dh]`` inputs."""
    scale = q.shape[-1] ** -0.25
    projection = projection.astype(q.dtype, copy=False)
    qf = positive_features(q * scale, projection, per_row=True)
    kf = positive_features(k * scale, projection, per_row=False)
    context = kf.swapaxes(-1, -2) @ v
    k_sum = kf.sum(axis=-2, keepdims=True).swapaxes(-1, -2)
    normalizer = qf @ k_sum
    return (qf @ context) / normalizer


class MultiHeadSelfAttention(Module):
    def __init__(self, cfg: TransformerLayerConfig):
        self.cfg = cfg
        self.in_dim = cfg.input_dim
        self.dim = cfg.hidden_dim
        self.num_heads = cfg.num_heads
        self.qkv = Linear(self.in_dim, 3 * self.dim)
        self.proj = Linear(self.dim, self.dim)
        if cfg.attention.kind == "performer":
            self.projection = random_features(
                cfg.attention.num_features, self.dim // self.num_heads, cfg.attention.seed
            )
        else:
            self.projection = None

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    def qkv_heads(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(f"attention expects token dim {self.in_dim}, got {x.shape}")
        qkv = self.qkv(x)
        d = self.dim
        return tuple(split_heads(qkv[..., i * d : (i + 1) * d], self.num_heads) for i in range(3))

    def weights(self, x: Tensor) -> Tensor:
        """Softmax attention weights ``[..., heads, l, l]`` (standard backend only)."""
        q, k, _ = self.qkv_heads(x)
        return attention_weights(q, k)

    def forward(self, x: Tensor, return_values: bool = False):
        q, k, v = self.qkv_heads(x)
        if self.projection is None:
            out = softmax_attention(q, k, v)
        else:
            out = performer_attention(q, k, v, self.projection)
        out = self.proj(merge_heads(out))
        if return_values:
            return out, merge_heads(v)
        return out

    def macs(self, tokens: int) -> int:
        l, d = tokens, self.dim
        total = self.qkv.macs(l) + self.proj.macs(l)
        if self.projection is None:
            total += 2 * l * l * d
        else:
            m = self.projection.shape[1]
            # q,k features: 2*l*d*m; context and readout: 2*l*m*d; normalizer: heads*l*m
            total += 4 * l * d * m + self.num_heads * l * m
        return total


class GhostLinear(Module):
    """Half the outputs from a full linear map, the other half a per-channel affine of the first half."""

    def __init__(self, in_features: int, out_features: int):
        if out_features % 2:
            raise ValueError(f"ghost linear needs an even output width, got {out_features}")
        self.in_features = in_features
        self.out_features = out_features
        self.primary = Linear(in_features, out_features // 2)
        self.cheap_scale = Parameter((out_features // 2,), ONES)
        self.cheap_shift = Parameter((out_features // 2,), ZEROS)

    def forward(self, x: Tensor) -> Tensor:
        y = self.primary(x)
        return T.concat([y, y * self.cheap_scale + self.cheap_shift], axis=-1)

    def macs(self, tokens: int) -> int:
        return self.primary.macs(tokens)


class Mlp(Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int | None = None, ghost: bool = False, dropout: float = 0.0, seed: int = 0):
        out_dim = in_dim if out_dim is None else out_dim
        make = GhostLinear if ghost else Linear
        self.fc1 = make(in_dim, hidden)
        self.fc2 = make(hidden, out_dim)
        self.dropout = dropout
        self._rng = np.random.default_rng(seed)

    def forward(self, x: Tensor) -> Tensor:
        h = T.dropout(T.gelu(self.fc1(x)), self.dropout, self._rng, self.training)
        return T.dropout(self.fc2(h), self.dropout, self._rng, self.training)

    def macs(self, tokens: int) -> int:
        return self.fc1.macs(tokens) + self.fc2.macs(tokens)


class SqueezeExcite(Module):
    """Channel gate: mean over tokens -> bottleneck -> sigmoid, multiplied onto every token."""

    def __init__(self, dim: int, reduction: int = 4):
        if dim // reduction < 1:
            raise ValueError(f"reduction {reduction} too large for dim {dim}")
        self.reduce = Linear(dim, dim // reduction)
        self.expand = Linear(dim // reduction, dim)

    def forward(self, x: Tensor) -> Tensor:
        pooled = x.mean(axis=-2, keepdims=True)
        gate = T.sigmoid(self.expand(T.relu(self.reduce(pooled))))
        return x * gate

    def macs(self, tokens: int) -> int:
        return self.reduce.macs(1) + self.expand.macs(1)


class TransformerLayer(Module):
    """``x <- x + MSA(LN(x)); x <- x + MLP(LN(x))`` with optional SE gate and ghost MLP."""

    def __init__(self, cfg: TransformerLayerConfig, se_reduction: int | None = None, ghost: bool = False, seed: int = 0):
        self.cfg = cfg
        self.norm1 = LayerNorm(cfg.input_dim)
        self.attn = MultiHeadSelfAttention(cfg)
        self.se = SqueezeExcite(cfg.hidden_dim, se_reduction) if se_reduction else None
        self.norm2 = LayerNorm(cfg.hidden_dim)
        self.mlp = Mlp(cfg.hidden_dim, cfg.mlp_size, ghost=ghost, dropout=cfg.dropout, seed=seed)

    @property
    def value_skip(self) -> bool:
        return self.cfg.input_dim != self.cfg.hidden_dim

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.cfg.input_dim:
            raise T.ShapeError(f"layer expects token dim {self.cfg.input_dim}, got {x.shape}")
        attn, values = self.attn(self.norm1(x), return_values=True)
        if self.se is not None:
            attn = self.se(attn)
        x = (values if self.value_skip else x) + attn
        return x + self.mlp(self.norm2(x))

    def macs(self, tokens: int) -> int:
        total = self.attn.macs(tokens) + self.mlp.macs(tokens)
        if self.se is not None:
            total += self.se.macs(tokens)
        return total


def transformer_layer_param_count(d: int, mlp_size: int) -> int:
    """Closed-form parameter count of a standard layer with biases everywhere."""
    return 4 * d * d + 4 * d + 2 * d * mlp_size + d + mlp_size + 4 * d
