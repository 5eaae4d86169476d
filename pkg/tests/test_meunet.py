import numpy as np
import pytest

from glfc.errors import ConfigError, ShapeError
from glfc.meunet import (VARIANTS, MEUNetConfig, VSSBlock, VSSSkip, adaptive_patch_size,
                         build_model, miniature_config, param_count, patchify, serialized_size,
                         unpatchify)
from glfc.io import checkpoint_bytes
from glfc.tensor import Tensor


@pytest.mark.parametrize("n,tokens,m", [(256, 1024, 8), (128, 1024, 4), (64, 64, 8), (32, 16, 8)])
def test_adaptive_patch_size(n, tokens, m):
    assert adaptive_patch_size(n, tokens) == m
    assert (n // m) ** 2 == tokens


def test_adaptive_patch_size_rejects_non_integer():
    with pytest.raises(ConfigError):
        adaptive_patch_size(256, 1000)


def test_unknown_variant():
    with pytest.raises(ConfigError):
        MEUNetConfig(variant="resnet").validate()


def test_patchify_roundtrip():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 8, 8)))
    tok = patchify(x, 4)
    assert tok.shape == (2, 4, 48)
    np.testing.assert_array_equal(unpatchify(tok, 4, 3).data, x.data)


def test_vss_block_is_identity_at_init():
    rng = np.random.default_rng(0)
    blk = VSSBlock(8, 4, rng, np.float64)
    x = Tensor(rng.normal(size=(2, 16, 8)))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_vss_skip_passes_feature_through_at_init():
    rng = np.random.default_rng(1)
    skip = VSSSkip(4, 2, 8, 2, 4, rng, np.float64)
    feat = Tensor(rng.normal(size=(1, 4, 8, 8)))
    np.testing.assert_allclose(skip(feat).data, feat.data, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_variant_forward_shape_and_range(variant):
    model = build_model(miniature_config(variant, size=32), seed=0)
    out = model.predict(np.random.default_rng(0).uniform(-1, 1, (2, 1, 32, 32)))
    assert out.shape == (2, 1, 32, 32)
    assert np.all(np.abs(out) <= 1)


def test_vss_placement_per_variant():
    count = {v: len(build_model(miniature_config(v)).skip_vss) for v in VARIANTS}
    assert count == {"meunet": 2, "meunet_v1": 1, "meunet_v2": 1, "meunet_fixed_patch": 2,
                     "unet_d2": 0, "unet_d3": 0, "unet_d4": 0}


def test_wrong_input_shape():
    model = build_model(miniature_config())
    with pytest.raises(ShapeError):
        model.predict(np.zeros((1, 1, 16, 16)))


def test_same_seed_same_weights():
    a = build_model(miniature_config(), seed=5).state_dict()
    b = build_model(miniature_config(), seed=5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_serialized_size_matches_bytes():
    model = build_model(miniature_config())
    assert serialized_size(model) == len(checkpoint_bytes(model.state_dict()))


def test_full_size_parameter_count():
    # full-size model, only built, never run
    assert param_count(build_model(MEUNetConfig())) == 10_167_233


def test_meunet_matches_unet_d2_at_init():
    me = build_model(miniature_config("meunet"), seed=3, dtype=np.float64)
    un = build_model(miniature_config("unet_d2"), seed=9, dtype=np.float64)
    shared = me.state_dict()
    for name, p in un.named_parameters():
        p.data = shared[name].copy()
    x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 32, 32))
    np.testing.assert_allclose(me.predict(x), un.predict(x), atol=1e-12)
