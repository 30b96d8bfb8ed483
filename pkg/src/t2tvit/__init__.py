"""Tokens-to-Token vision transformers on a small numpy autograd engine."""
from .cost import count_macs, count_params
from .model import BackboneConfig, ModelConfig, T2TViT, build
from .tensor import Tensor, no_grad, precision
from .tokenizer import SoftSplitSpec, T2TConfig, soft_split, token_length_chain
from .variants import apply_variant, named_variant
from .zoo import get_config, preset_names

__all__ = [
    "BackboneConfig",
    "ModelConfig",
    "SoftSplitSpec",
    "T2TConfig",
    "T2TViT",
    "Tensor",
    "apply_variant",
    "build",
    "count_macs",
    "count_params",
    "get_config",
    "named_variant",
    "no_grad",
    "precision",
    "preset_names",
    "soft_split",
    "token_length_chain",
]
