"""Named model configurations.

T2T stages use hidden dim 64, MLP size 64 and one head. The Performer
stages draw 32 random features. Backbone head count defaults to ``d // 64``.
"""
from __future__ import annotations

from .attention import AttentionBackend, TransformerLayerConfig
from .model import BackboneConfig, ModelConfig
from .tokenizer import SoftSplitSpec, T2TConfig

DEFAULT_SPLITS = (SoftSplitSpec(7, 3, 2), SoftSplitSpec(3, 1, 1), SoftSplitSpec(3, 1, 1))
SMALL_IMAGE_SPLITS = (SoftSplitSpec(3, 1, 1), SoftSplitSpec(3, 1, 1), SoftSplitSpec(3, 1, 1))
PERFORMER_FEATURES = 32


def t2t_tokenizer(
    d: int,
    attention: str = "performer",
    splits=DEFAULT_SPLITS,
    hidden_dim: int = 64,
    mlp_size: int = 64,
    num_features: int = PERFORMER_FEATURES,
    seed: int = 0,
) -> T2TConfig:
    backend = AttentionBackend.performer(num_features, seed) if attention == "performer" else AttentionBackend.standard()
    layer = TransformerLayerConfig(hidden_dim, mlp_size, num_heads=1, attention=backend)
    return T2TConfig(splits=tuple(splits), layer=layer, output_proj_dim=d)


def hard_split_tokenizer(d: int, patch: int = 16) -> T2TConfig:
    """Vanilla ViT patch embedding: one non-overlapping split, then a linear map to ``d``."""
    layer = TransformerLayerConfig(64, 64, 1)
    return T2TConfig(splits=(SoftSplitSpec(patch, 0, 0),), layer=layer, output_proj_dim=d)


def t2t_vit(name: str, depth: int, d: int, mlp: int, attention: str = "performer", num_classes: int = 1000) -> ModelConfig:
    return ModelConfig(
        name=name,
        tokenizer=t2t_tokenizer(d, attention),
        backbone=BackboneConfig(depth, d, mlp, num_classes=num_classes),
    )


def vit(name: str, depth: int, d: int, mlp: int, num_classes: int = 1000) -> ModelConfig:
    return ModelConfig(name=name, tokenizer=hard_split_tokenizer(d), backbone=BackboneConfig(depth, d, mlp, num_classes=num_classes))


def tiny(num_classes: int = 10, d: int = 64, depth: int = 2, image_size: int = 32, t2t_dim: int = 32) -> ModelConfig:
    """Desk-scale model for 32x32 inputs: 32 -> 16 -> 8 -> 4 grid, 16 final tokens."""
    return ModelConfig(
        name="T2T-ViT-tiny",
        tokenizer=t2t_tokenizer(d, "standard", SMALL_IMAGE_SPLITS, hidden_dim=t2t_dim, mlp_size=t2t_dim),
        backbone=BackboneConfig(depth, d, 2 * d, num_classes=num_classes),
        image_size=image_size,
    )


def _presets() -> dict[str, ModelConfig]:
    configs = [
        # depth 7 matches the published 4.2M size; the 8-layer reading is kept as "-d8"
        t2t_vit("T2T-ViT-7", 7, 256, 512),
        t2t_vit("T2T-ViT-7-d8", 8, 256, 512),
        t2t_vit("T2T-ViT-12", 12, 256, 512),
        t2t_vit("T2T-ViT-14", 14, 384, 1152),
        t2t_vit("T2T-ViT-19", 19, 448, 1344),
        t2t_vit("T2T-ViT-24", 24, 512, 1536),
        t2t_vit("T2T-ViT_t-14", 14, 384, 1152, attention="standard"),
        t2t_vit("T2T-ViT_t-19", 19, 448, 1344, attention="standard"),
        t2t_vit("T2T-ViT_t-24", 24, 512, 1536, attention="standard"),
        vit("ViT-S/16", 8, 768, 2358),
        vit("ViT-B/16", 12, 768, 3072),
        vit("ViT-L/16", 24, 1024, 4096),
        tiny(),
    ]
    return {c.name.lower(): c for c in configs}


PRESETS = _presets()


def preset_names() -> list[str]:
    return [c.name for c in PRESETS.values()]


def get_config(name: str) -> ModelConfig:
    key = name.strip().lower()
    if key not in PRESETS:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(preset_names())}")
    return PRESETS[key]
