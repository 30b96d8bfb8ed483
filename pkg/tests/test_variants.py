import numpy as np
import pytest

from t2tvit import tensor as T
from t2tvit.attention import GhostLinear
from t2tvit.model import BackboneConfig, build
from t2tvit.tensor import Tensor
from t2tvit.variants import KINDS, VariantSpec, apply_variant, named_variant
from t2tvit.zoo import tiny


def params(cfg):
    return build(cfg, materialize=False).num_parameters()


BASE_T2T = params("T2T-ViT-14")
BASE_VIT = params("ViT-S/16")


@pytest.mark.parametrize("base", ["T2T-ViT-14", "ViT-S/16"])
def test_resnext_heads_param_neutral(base):
    cfg = apply_variant(base, "resnext")
    assert cfg.backbone.num_heads == 32
    assert params(cfg) == params(base)


def test_resnext_heads_change_macs_not_params():
    # attention MACs are head-count independent under the 2*l^2*d convention
    a = build("T2T-ViT-14", materialize=False).cost_rows(224)
    b = build(apply_variant("T2T-ViT-14", "resnext"), materialize=False).cost_rows(224)
    assert [r[2] for r in a] == [r[2] for r in b]


def test_ghost_reduces_params():
    assert params(apply_variant("T2T-ViT-14", "ghost")) < BASE_T2T
    assert params(apply_variant("ViT-S/16", "ghost")) < BASE_VIT
    assert 16.3e6 * 0.9 <= params(named_variant("T2T-ViT-Ghost")) <= 16.3e6 * 1.1


def test_ghost_rejects_odd_mlp():
    odd = tiny().replace(backbone=BackboneConfig(2, 64, 127, num_classes=10))
    with pytest.raises(ValueError):
        apply_variant(odd, "ghost")
    with pytest.raises(ValueError):
        GhostLinear(4, 5)


def test_se_adds_less_than_five_percent():
    se = params(named_variant("T2T-ViT-SE"))
    assert BASE_T2T < se < 1.05 * BASE_T2T
    assert 21.9e6 * 0.97 <= se <= 21.9e6 * 1.03


@pytest.mark.parametrize(
    "name,target,tol",
    [
        ("ViT-DN", 24.5e6, 0.05),
        ("ViT-SW", 47.9e6, 0.05),
        ("T2T-ViT-14_wo_T2T", 21.1e6, 0.03),
        ("T2T-ViT-Dense", 23.6e6, 0.05),
        ("ViT-Dense", 46.7e6, 0.05),
        ("T2T-ViT_c-14", 21.3e6, 0.05),
    ],
)
def test_variant_param_bands(name, target, tol):
    assert abs(params(named_variant(name)) / target - 1) <= tol


def test_shape_rewrites():
    dn = named_variant("ViT-DN").backbone
    sw = named_variant("ViT-SW").backbone
    assert (dn.depth, dn.hidden_dim, dn.mlp_size) == (16, 384, 1152)
    assert (sw.depth, sw.hidden_dim, sw.mlp_size) == (4, 1024, 3584)
    wide = named_variant("T2T-ViT-d768-4").backbone
    assert (wide.depth, wide.hidden_dim) == (4, 768)


def test_unknown_and_invalid_variants():
    with pytest.raises(ValueError):
        VariantSpec("mobile")
    with pytest.raises(KeyError):
        named_variant("ViT-Mobile")
    with pytest.raises(ValueError):
        apply_variant("ViT-S/16", "no-t2t")
    with pytest.raises(ValueError):
        apply_variant(apply_variant("T2T-ViT-14", "se"), "ghost")


def test_conv_front_end_token_count():
    model = build(named_variant("T2T-ViT_c-14"), materialize=False)
    assert model.tokenizer.geometry(224, 224)[-1].length == 196
    assert model.sequence_length(224) == 197


def test_no_t2t_token_count():
    assert build(named_variant("T2T-ViT-14_wo_T2T"), materialize=False).sequence_length(224) == 197


@pytest.mark.parametrize("kind", [k for k in KINDS if k not in ("deep-narrow", "shallow-wide", "wide")])
def test_tiny_variants_forward_and_backward(kind):
    spec = VariantSpec(kind, heads=8, growth=8, init_dim=32, depth=2, mlp_ratio=2.0)
    cfg = apply_variant(tiny(num_classes=3), spec)
    if kind == "no-t2t":
        cfg = cfg.replace(image_size=32)
    model = build(cfg, seed=1)
    images = Tensor(np.random.default_rng(0).random((2, 32, 32, 3)).astype(np.float32))
    logits = model(images)
    assert logits.shape == (2, 3)
    assert np.isfinite(logits.data).all()
    T.cross_entropy(logits, Tensor(np.eye(3, dtype=np.float32)[[0, 2]])).backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None]
    assert not missing
