"""Tokens-to-Token tokenization.

An image is split into overlapping ``k x k`` patches (soft split). Each
patch becomes one token of width ``c * k * k``. Then, ``n`` times over, the
tokens pass through a narrow transformer layer, are reshaped back onto their
``h x w`` grid, and are soft split again. A final linear map takes the last
split's tokens to the backbone width.

Token count after a soft split with patch ``k``, overlap ``s`` and padding ``p``:

    l_o = floor((h + 2p - k) / (k - s) + 1) * floor((w + 2p - k) / (k - s) + 1)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from . import tensor as T
from .attention import AttentionBackend, TransformerLayer, TransformerLayerConfig
from .nn import Linear, Module, ModuleList
from .tensor import Tensor


@dataclass(frozen=True)
class SoftSplitSpec:
    k: int
    s: int = 0
    p: int = 0

    def __post_init__(self):
        if not (self.k > self.s >= 0) or self.p < 0:
            raise ValueError(f"invalid soft split k={self.k} s={self.s} p={self.p}: need k > s >= 0 and p >= 0")

    @property
    def stride(self) -> int:
        return self.k - self.s

    def grid(self, h: int, w: int) -> tuple[int, int]:
        if h + 2 * self.p < self.k or w + 2 * self.p < self.k:
            raise T.ShapeError(f"patch {self.k} larger than padded image {h + 2 * self.p}x{w + 2 * self.p}")
        return (h + 2 * self.p - self.k) // self.stride + 1, (w + 2 * self.p - self.k) // self.stride + 1

    def __str__(self) -> str:
        return f"k={self.k},s={self.s},p={self.p}"

    @classmethod
    def parse(cls, text: str) -> "SoftSplitSpec":
        """Parse ``"k=7,s=3,p=2"``."""
        fields = {}
        for part in text.split(","):
            key, sep, value = part.partition("=")
            key = key.strip()
            if not sep or key not in ("k", "s", "p"):
                raise ValueError(f"bad soft split field {part!r} in {text!r}")
            fields[key] = int(value)
        if "k" not in fields:
            raise ValueError(f"soft split {text!r} is missing k")
        return cls(**fields)


@dataclass
class TokenBatch:
    """Tokens ``[..., l, c]`` plus the ``(h, w)`` grid they came from, if any."""

    tokens: Tensor
    spatial: tuple[int, int] | None = None

    def __post_init__(self):
        if self.tokens.ndim < 2:
            raise T.ShapeError(f"tokens must be [..., l, c], got {self.tokens.shape}")
        if self.spatial is not None:
            h, w = self.spatial
            if h * w != self.length:
                raise T.ShapeError(f"spatial grid {h}x{w} does not hold {self.length} tokens")

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def grid(self) -> Tensor:
        """Row-major reshape to ``[..., h, w, c]``."""
        if self.spatial is None:
            raise T.ShapeError("tokens carry no spatial provenance")
        h, w = self.spatial
        return self.tokens.reshape(*self.tokens.shape[:-2], h, w, self.dim)


def soft_split(image: Tensor, spec: SoftSplitSpec) -> TokenBatch:
    """Overlapping patch extraction on ``[..., h, w, c]``; tokens flatten as rows, cols, channels."""
    *_, h, w, _ = image.shape
    rows, cols = spec.grid(h, w)
    patches = T.unfold2d(image, spec.k, spec.stride, spec.p)
    tokens = patches.reshape(*patches.shape[:-3], rows * cols, patches.shape[-1])
    return TokenBatch(tokens, (rows, cols))


def restructurize(tokens: TokenBatch, layer: TransformerLayer) -> Tensor:
    """Transform tokens with one transformer layer, then reshape them onto their grid."""
    if tokens.spatial is None:
        raise T.ShapeError("re-structurization needs tokens with spatial provenance")
    return TokenBatch(layer(tokens.tokens), tokens.spatial).grid()


class StageGeometry(NamedTuple):
    length: int
    h: int
    w: int
    token_dim: int


def _default_layer() -> TransformerLayerConfig:
    return TransformerLayerConfig(hidden_dim=64, mlp_size=64, num_heads=1, attention=AttentionBackend.performer(32))


@dataclass(frozen=True)
class T2TConfig:
    """``splits`` holds ``n + 1`` soft splits; ``layer`` is the template for the ``n`` T2T layers.

    With a single split (``n == 0``) this degenerates to the plain
    non-overlapping patch embedding of a vanilla ViT.
    """

    splits: tuple[SoftSplitSpec, ...] = (SoftSplitSpec(7, 3, 2), SoftSplitSpec(3, 1, 1), SoftSplitSpec(3, 1, 1))
    layer: TransformerLayerConfig = field(default_factory=_default_layer)
    output_proj_dim: int = 384
    in_channels: int = 3

    def __post_init__(self):
        if len(self.splits) < 1:
            raise ValueError("T2T config needs at least one soft split")
        object.__setattr__(self, "splits", tuple(self.splits))

    @property
    def n(self) -> int:
        return len(self.splits) - 1

    def layer_config(self, i: int, in_dim: int) -> TransformerLayerConfig:
        base = self.layer
        return TransformerLayerConfig(
            hidden_dim=base.hidden_dim,
            mlp_size=base.mlp_size,
            num_heads=base.num_heads,
            attention=base.attention.reseeded(i),
            in_dim=in_dim,
            dropout=base.dropout,
        )


def token_length_chain(h0: int, w0: int, cfg: T2TConfig) -> list[StageGeometry]:
    """Geometry of the tokens produced by every soft split, predicted arithmetically."""
    chain = []
    h, w, c = h0, w0, cfg.in_channels
    for i, spec in enumerate(cfg.splits):
        rows, cols = spec.grid(h, w)
        if rows < 1 or cols < 1:
            raise T.ShapeError(f"split {i} ({spec}) yields an empty grid from {h}x{w}")
        token_dim = c * spec.k * spec.k
        chain.append(StageGeometry(rows * cols, rows, cols, token_dim))
        h, w, c = rows, cols, cfg.layer.hidden_dim
    return chain


class T2TModule(Module):
    def __init__(self, cfg: T2TConfig, seed: int = 0):
        self.cfg = cfg
        self.layers = ModuleList()
        c = cfg.in_channels
        for i, spec in enumerate(cfg.splits[:-1]):
            layer_cfg = cfg.layer_config(i, c * spec.k * spec.k)
            self.layers.append(TransformerLayer(layer_cfg, seed=seed + i))
            c = layer_cfg.hidden_dim
        last = cfg.splits[-1]
        self.project = Linear(c * last.k * last.k, cfg.output_proj_dim)

    def forward(self, image: Tensor, capture: dict | None = None) -> TokenBatch:
        tokens = soft_split(image, self.cfg.splits[0])
        if capture is not None:
            capture["t2t.split0"] = tokens
        for i, layer in enumerate(self.layers):
            grid = restructurize(tokens, layer)
            if capture is not None:
                capture[f"t2t.stage{i + 1}"] = TokenBatch(layer_out_tokens(grid), tokens.spatial)
            tokens = soft_split(grid, self.cfg.splits[i + 1])
            if capture is not None:
                capture[f"t2t.split{i + 1}"] = tokens
        out = TokenBatch(self.project(tokens.tokens), tokens.spatial)
        if capture is not None:
            capture["t2t.project"] = out
        return out

    def geometry(self, h: int, w: int) -> list[StageGeometry]:
        return token_length_chain(h, w, self.cfg)

    def cost_rows(self, h: int, w: int) -> list[tuple[str, Module, int]]:
        chain = self.geometry(h, w)
        rows = [(f"t2t.layers.{i}", layer, layer.macs(chain[i].length)) for i, layer in enumerate(self.layers)]
        rows.append(("t2t.project", self.project, self.project.macs(chain[-1].length)))
        return rows


def layer_out_tokens(grid: Tensor) -> Tensor:
    *lead, h, w, c = grid.shape
    return grid.reshape(*lead, h * w, c)


def t2t_forward(image: Tensor, module: T2TModule) -> TokenBatch:
    return module(image)


@dataclass(frozen=True)
class ConvFrontEndConfig:
    """Convolutional stand-in for the T2T module: strided convs, then a linear map to ``d``."""

    kernels: tuple[int, ...] = (7, 3, 3)
    strides: tuple[int, ...] = (4, 2, 2)
    paddings: tuple[int, ...] = (2, 1, 1)
    channels: int = 64
    output_proj_dim: int = 384
    in_channels: int = 3

    def __post_init__(self):
        for name in ("kernels", "strides", "paddings"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not len(self.kernels) == len(self.strides) == len(self.paddings) >= 1:
            raise ValueError("kernels, strides and paddings must have the same non-zero length")
        if any(s < 1 or s > k for k, s in zip(self.kernels, self.strides)):
            raise ValueError(f"each stride must lie in [1, kernel]: {self.kernels} / {self.strides}")

    @property
    def splits(self) -> tuple[SoftSplitSpec, ...]:
        # a stride-t convolution visits the same windows as a soft split with overlap k - t
        return tuple(SoftSplitSpec(k, k - s, p) for k, s, p in zip(self.kernels, self.strides, self.paddings))

    def geometry(self, h: int, w: int) -> list[StageGeometry]:
        chain, c = [], self.in_channels
        for spec in self.splits:
            h, w = spec.grid(h, w)
            chain.append(StageGeometry(h * w, h, w, c * spec.k * spec.k))
            c = self.channels
        return chain


class ConvFrontEnd(Module):
    def __init__(self, cfg: ConvFrontEndConfig, seed: int = 0):
        self.cfg = cfg
        self.convs = ModuleList()
        c = cfg.in_channels
        for spec in cfg.splits:
            self.convs.append(Linear(c * spec.k * spec.k, cfg.channels))
            c = cfg.channels
        self.project = Linear(cfg.channels, cfg.output_proj_dim)

    def forward(self, image: Tensor, capture: dict | None = None) -> TokenBatch:
        x = image
        last = len(self.convs) - 1
        for i, (spec, conv) in enumerate(zip(self.cfg.splits, self.convs)):
            tokens = soft_split(x, spec)
            y = conv(tokens.tokens)
            if i < last:
                y = T.gelu(y)
            tokens = TokenBatch(y, tokens.spatial)
            if capture is not None:
                capture[f"conv.stage{i + 1}"] = tokens
            x = tokens.grid()
        out = TokenBatch(self.project(tokens.tokens), tokens.spatial)
        if capture is not None:
            capture["conv.project"] = out
        return out

    def geometry(self, h: int, w: int) -> list[StageGeometry]:
        return self.cfg.geometry(h, w)

    def cost_rows(self, h: int, w: int) -> list[tuple[str, Module, int]]:
        chain = self.geometry(h, w)
        rows = [(f"conv.convs.{i}", conv, conv.macs(chain[i].length)) for i, conv in enumerate(self.convs)]
        rows.append(("conv.project", self.project, self.project.macs(chain[-1].length)))
        return rows
