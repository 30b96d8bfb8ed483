"""T2T-ViT assembly: tokenizer, class token, position embedding, backbone, head."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionBackend, Mlp, MultiHeadSelfAttention, TransformerLayer, TransformerLayerConfig
from .nn import TRUNC_NORMAL, LayerNorm, Linear, Module, ModuleList, Parameter
from .tensor import Tensor
from .tokenizer import ConvFrontEnd, ConvFrontEndConfig, SoftSplitSpec, T2TConfig, T2TModule, TokenBatch

VARIANTS = (None, "se", "ghost", "dense", "resnext")


@dataclass(frozen=True)
class BackboneConfig:
    depth: int
    hidden_dim: int
    mlp_size: int
    num_heads: int | None = None
    num_classes: int = 1000
    dropout: float = 0.0
    learned_pe: bool = False

    def __post_init__(self):
        if self.num_heads is None:
            object.__setattr__(self, "num_heads", max(1, self.hidden_dim // 64))
        if self.depth < 1:
            raise ValueError(f"backbone depth must be >= 1, got {self.depth}")
        if self.hidden_dim < 1 or self.mlp_size < 1 or self.num_classes < 1:
            raise ValueError("backbone dims must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")

    def layer(self) -> TransformerLayerConfig:
        return TransformerLayerConfig(self.hidden_dim, self.mlp_size, self.num_heads, dropout=self.dropout)


@dataclass(frozen=True)
class DenseConfig:
    """Dense connectivity: layer ``i`` sees ``init_dim + i * growth`` channels and appends ``growth`` more."""

    init_dim: int = 128
    growth: int = 32
    mlp_ratio: float = 4.0
    num_heads: int = 4

    def width(self, i: int) -> int:
        return self.init_dim + i * self.growth


@dataclass(frozen=True)
class ModelConfig:
    name: str
    tokenizer: T2TConfig | ConvFrontEndConfig
    backbone: BackboneConfig
    variant: str | None = None
    se_reduction: int = 4
    dense: DenseConfig | None = None
    image_size: int = 224

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS[1:]}")
        if self.variant == "dense" and self.dense is None:
            raise ValueError("dense variant needs a DenseConfig")
        if self.variant == "ghost" and self.backbone.mlp_size % 2:
            raise ValueError(f"ghost MLP needs an even mlp_size, got {self.backbone.mlp_size}")
        if self.variant != "dense" and self.tokenizer.output_proj_dim != self.backbone.hidden_dim:
            raise ValueError(
                f"tokenizer projects to {self.tokenizer.output_proj_dim} but backbone width is {self.backbone.hidden_dim}"
            )

    @property
    def token_dim(self) -> int:
        return self.dense.init_dim if self.variant == "dense" else self.backbone.hidden_dim

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tokenizer"]["type"] = "conv" if isinstance(self.tokenizer, ConvFrontEndConfig) else "t2t"
        return d

    def to_json(self) -> str:
        """Canonical text form: sorted keys, no whitespace."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        tok = dict(d.pop("tokenizer"))
        kind = tok.pop("type", "t2t")
        if kind == "conv":
            tokenizer = ConvFrontEndConfig(**tok)
        else:
            layer = dict(tok.pop("layer"))
            layer["attention"] = AttentionBackend(**layer["attention"])
            tok["layer"] = TransformerLayerConfig(**layer)
            tok["splits"] = tuple(SoftSplitSpec(**s) for s in tok["splits"])
            tokenizer = T2TConfig(**tok)
        dense = d.pop("dense", None)
        return cls(
            tokenizer=tokenizer,
            backbone=BackboneConfig(**d.pop("backbone")),
            dense=DenseConfig(**dense) if dense else None,
            **d,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def sinusoidal_pe(length: int, d: int) -> np.ndarray:
    """Fixed table ``E[pos, 2i] = sin(pos / 10000^(2i/d))``, ``E[pos, 2i+1] = cos(...)``."""
    if d % 2:
        raise ValueError(f"sinusoidal embedding needs an even width, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((length, d))
    table[:, 0::2] = np.sin(pos / freq)
    table[:, 1::2] = np.cos(pos / freq)
    return table


class DenseLayer(Module):
    """Attention over all ``c`` incoming channels, then an MLP whose ``growth`` outputs are appended."""

    def __init__(self, width: int, cfg: DenseConfig, dropout: float = 0.0):
        layer_cfg = TransformerLayerConfig(width, max(1, int(round(cfg.mlp_ratio * width))), cfg.num_heads, dropout=dropout)
        self.width = width
        self.norm1 = LayerNorm(width)
        self.attn = MultiHeadSelfAttention(layer_cfg)
        self.norm2 = LayerNorm(width)
        self.mlp = Mlp(width, layer_cfg.mlp_size, out_dim=cfg.growth, dropout=dropout)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return T.concat([x, self.mlp(self.norm2(x))], axis=-1)

    def macs(self, tokens: int) -> int:
        return self.attn.macs(tokens) + self.mlp.macs(tokens)


class T2TViT(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        bb = cfg.backbone
        if isinstance(cfg.tokenizer, ConvFrontEndConfig):
            self.tokenizer = ConvFrontEnd(cfg.tokenizer, seed)
        else:
            self.tokenizer = T2TModule(cfg.tokenizer, seed)
        width = cfg.token_dim
        self.cls_token = Parameter((width,), TRUNC_NORMAL)
        if bb.learned_pe:
            length = self.tokenizer.geometry(cfg.image_size, cfg.image_size)[-1].length + 1
            self.pos_embed = Parameter((length, width), TRUNC_NORMAL)
        self.blocks = ModuleList()
        if cfg.variant == "dense":
            for i in range(bb.depth):
                self.blocks.append(DenseLayer(cfg.dense.width(i), cfg.dense, bb.dropout))
            width = cfg.dense.width(bb.depth)
        else:
            layer_cfg = bb.layer()
            se = cfg.se_reduction if cfg.variant == "se" else None
            for i in range(bb.depth):
                self.blocks.append(TransformerLayer(layer_cfg, se_reduction=se, ghost=cfg.variant == "ghost", seed=seed + 100 + i))
        self.norm = LayerNorm(width)
        self.head = Linear(width, bb.num_classes)
        self._pe_cache: dict[tuple, np.ndarray] = {}

    @property
    def width(self) -> int:
        return self.cfg.token_dim

    def position_embedding(self, length: int, dtype) -> Tensor:
        if self.cfg.backbone.learned_pe:
            if length != self.pos_embed.shape[0]:
                raise T.ShapeError(f"learned position table holds {self.pos_embed.shape[0]} rows, sequence has {length}")
            return self.pos_embed
        key = (length, np.dtype(dtype).str)
        if key not in self._pe_cache:
            self._pe_cache[key] = sinusoidal_pe(length, self.width).astype(dtype)
        return Tensor(self._pe_cache[key])

    def forward_features(self, images, capture: dict | None = None) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.cls_token.dtype))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4 or x.shape[-1] != self.cfg.tokenizer.in_channels:
            raise T.ShapeError(f"expected images [B, h, w, {self.cfg.tokenizer.in_channels}], got {x.shape}")
        tokens = self.tokenizer(x, capture)
        batch, width = x.shape[0], self.width
        cls = self.cls_token.reshape(1, 1, width) + np.zeros((batch, 1, width), dtype=tokens.tokens.dtype)
        seq = T.concat([cls, tokens.tokens], axis=1)
        seq = seq + self.position_embedding(seq.shape[1], seq.dtype)
        for i, block in enumerate(self.blocks):
            seq = block(seq)
            if capture is not None:
                capture[f"backbone.{i}"] = TokenBatch(seq[:, 1:], tokens.spatial)
        seq = self.norm(seq)
        if capture is not None:
            capture["backbone.norm"] = TokenBatch(seq, None)
        return seq

    def forward(self, images, capture: dict | None = None) -> Tensor:
        seq = self.forward_features(images, capture)
        logits = self.head(seq[:, 0])
        if capture is not None:
            capture["head"] = TokenBatch(logits.reshape(logits.shape[0], 1, -1), None)
        return logits

    def sequence_length(self, input_size: int | tuple[int, int]) -> int:
        h, w = (input_size, input_size) if isinstance(input_size, int) else input_size
        return self.tokenizer.geometry(h, w)[-1].length + 1

    def cost_rows(self, input_size: int | tuple[int, int]) -> list[tuple[str, Module | None, int]]:
        """``(name, module, macs)`` per layer; ``module`` owns the parameters counted on that row."""
        h, w = (input_size, input_size) if isinstance(input_size, int) else input_size
        rows: list[tuple[str, Module | None, int]] = list(self.tokenizer.cost_rows(h, w))
        length = self.sequence_length((h, w))
        rows.append(("cls_token", None, 0))
        for i, block in enumerate(self.blocks):
            rows.append((f"blocks.{i}", block, block.macs(length)))
        rows.append(("norm", self.norm, 0))
        rows.append(("head", self.head, self.head.macs(1)))
        return rows


def build(cfg: ModelConfig | str, seed: int = 0, materialize: bool = True) -> T2TViT:
    """Construct a model; ``materialize=False`` leaves all weights zero (for cost accounting)."""
    if isinstance(cfg, str):
        from .zoo import get_config

        cfg = get_config(cfg)
    model = T2TViT(cfg, seed)
    model.assign_names()
    if materialize:
        model.initialize(seed)
    return model
