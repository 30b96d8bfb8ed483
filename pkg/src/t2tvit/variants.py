"""Architecture transfers from CNN design and the tokenizer/backbone ablations.

Each variant rewrites a base ``ModelConfig``:

- ``deep-narrow``:  depth 16, width 384, MLP 3x width
- ``shallow-wide``: depth 4, width 1024, MLP 3.5x width
- ``dense``:        19 densely connected layers, widths growing from 128 by a fixed
                    growth (32 over a hard-split tokenizer, 24 over a T2T tokenizer)
- ``se``:           squeeze-excitation gate (reduction 4) on each attention output
- ``resnext``:      32 attention heads, all widths unchanged
- ``ghost``:        each MLP linear computes half its outputs, the rest are a
                    per-channel affine of that half
- ``no-t2t``:       16x16 non-overlapping patch embedding instead of the T2T module
- ``conv``:         three convolutions, kernels (7,3,3), strides (4,2,2), 64 channels
- ``wide``:         width 768, depth 4, MLP 3x width
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .model import BackboneConfig, DenseConfig, ModelConfig, T2TViT, build
from .tokenizer import ConvFrontEndConfig, T2TConfig
from .zoo import get_config, hard_split_tokenizer

KINDS = ("deep-narrow", "shallow-wide", "dense", "se", "resnext", "ghost", "no-t2t", "conv", "wide")

ALIASES = {
    "dn": "deep-narrow",
    "deepnarrow": "deep-narrow",
    "sw": "shallow-wide",
    "shallowwide": "shallow-wide",
    "resnext-heads": "resnext",
    "wo-t2t": "no-t2t",
    "not2t": "no-t2t",
    "conv-front-end": "conv",
    "c": "conv",
    "d768-4": "wide",
    "wide-backbone": "wide",
}


@dataclass(frozen=True)
class VariantSpec:
    kind: str
    heads: int = 32
    depth: int | None = None
    dim: int | None = None
    mlp_size: int | None = None
    reduction: int = 4
    growth: int | None = None
    init_dim: int = 128
    mlp_ratio: float | None = None

    def __post_init__(self):
        kind = ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in KINDS:
            raise ValueError(f"unknown variant {self.kind!r}; choose from {', '.join(KINDS)}")
        object.__setattr__(self, "kind", kind)
        if self.heads < 1 or self.reduction < 1:
            raise ValueError("heads and reduction must be positive")


def _is_hard_split(cfg: ModelConfig) -> bool:
    return isinstance(cfg.tokenizer, T2TConfig) and cfg.tokenizer.n == 0


def _resize(base: ModelConfig, depth: int, dim: int, mlp: int, suffix: str) -> ModelConfig:
    bb = replace(base.backbone, depth=depth, hidden_dim=dim, mlp_size=mlp, num_heads=max(1, dim // 64))
    tok = replace(base.tokenizer, output_proj_dim=dim)
    return base.replace(name=f"{base.name}-{suffix}", backbone=bb, tokenizer=tok)


def apply_variant(base: ModelConfig | str, v: VariantSpec | str) -> ModelConfig:
    if isinstance(base, str):
        base = get_config(base)
    if isinstance(v, str):
        v = VariantSpec(v)
    if base.variant is not None:
        raise ValueError(f"{base.name} already carries variant {base.variant!r}")
    bb = base.backbone

    if v.kind == "deep-narrow":
        dim = v.dim or 384
        return _resize(base, v.depth or 16, dim, v.mlp_size or 3 * dim, "DN")
    if v.kind == "shallow-wide":
        dim = v.dim or 1024
        return _resize(base, v.depth or 4, dim, v.mlp_size or int(3.5 * dim), "SW")
    if v.kind == "wide":
        dim = v.dim or 768
        depth = v.depth or 4
        return _resize(base, depth, dim, v.mlp_size or 3 * dim, f"d{dim}-{depth}")
    if v.kind == "resnext":
        if bb.hidden_dim % v.heads:
            raise ValueError(f"{v.heads} heads do not divide width {bb.hidden_dim}")
        return base.replace(name=f"{base.name}-ResNeXt", variant="resnext", backbone=replace(bb, num_heads=v.heads))
    if v.kind == "se":
        if bb.hidden_dim // v.reduction < 1:
            raise ValueError(f"SE reduction {v.reduction} too large for width {bb.hidden_dim}")
        return base.replace(name=f"{base.name}-SE", variant="se", se_reduction=v.reduction)
    if v.kind == "ghost":
        if bb.mlp_size % 2 or bb.hidden_dim % 2:
            raise ValueError(f"ghost MLP needs even widths, got mlp_size={bb.mlp_size}, hidden_dim={bb.hidden_dim}")
        return base.replace(name=f"{base.name}-Ghost", variant="ghost")
    if v.kind == "dense":
        hard = _is_hard_split(base)
        growth = v.growth or (32 if hard else 24)
        # ratios land near the reported 46.7M (ViT) / 23.7M (T2T-ViT) sizes
        ratio = v.mlp_ratio or (7.5 if hard else 4.5)
        dense = DenseConfig(v.init_dim, growth, ratio)
        depth = v.depth or 19
        return base.replace(
            name=f"{base.name}-Dense",
            variant="dense",
            dense=dense,
            backbone=replace(bb, depth=depth),
            tokenizer=replace(base.tokenizer, output_proj_dim=v.init_dim),
        )
    if v.kind == "no-t2t":
        if _is_hard_split(base):
            raise ValueError(f"{base.name} has no T2T module to remove")
        return base.replace(name=f"{base.name}-woT2T", tokenizer=hard_split_tokenizer(bb.hidden_dim))
    if v.kind == "conv":
        if _is_hard_split(base):
            raise ValueError(f"{base.name} has no T2T module to replace")
        tok = ConvFrontEndConfig(output_proj_dim=bb.hidden_dim, channels=getattr(base.tokenizer, "layer").hidden_dim)
        return base.replace(name=f"{base.name}-conv", tokenizer=tok)
    raise AssertionError(v.kind)


def build_variant(base: ModelConfig | str, v: VariantSpec | str, seed: int = 0, materialize: bool = True) -> T2TViT:
    return build(apply_variant(base, v), seed, materialize)


# the named rows of the CNN-transfer and ablation tables
NAMED = {
    "ViT-DN": ("ViT-S/16", "deep-narrow"),
    "ViT-SW": ("ViT-S/16", "shallow-wide"),
    "ViT-Dense": ("ViT-S/16", "dense"),
    "ViT-SE": ("ViT-S/16", "se"),
    "ViT-ResNeXt": ("ViT-S/16", "resnext"),
    "ViT-Ghost": ("ViT-S/16", "ghost"),
    "T2T-ViT-Dense": ("T2T-ViT-14", "dense"),
    "T2T-ViT-SE": ("T2T-ViT-14", "se"),
    "T2T-ViT-ResNeXt": ("T2T-ViT-14", "resnext"),
    "T2T-ViT-Ghost": ("T2T-ViT-14", "ghost"),
    "T2T-ViT-14_wo_T2T": ("T2T-ViT-14", "no-t2t"),
    "T2T-ViT_c-14": ("T2T-ViT-14", "conv"),
    "T2T-ViT-d768-4": ("T2T-ViT-14", "wide"),
}


def named_variant(name: str) -> ModelConfig:
    for key, (base, kind) in NAMED.items():
        if key.lower() == name.lower():
            return apply_variant(base, kind).replace(name=key)
    raise KeyError(f"unknown variant model {name!r}; known: {', '.join(NAMED)}")
