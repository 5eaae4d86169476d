import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glfc.errors import ContractError, EvaluationError, ShapeError
from glfc.losses import (BONE, GLOBAL, SOFT, IntensityWindow, hu_to_norm, mcl_loss, norm_to_hu,
                         window_renormalize)
from glfc.metrics import (body_mask, evaluate_pair, format_table, masked_psnr, masked_ssim,
                          region_masks_from_ct, ssim_map)
from glfc.phantom import PhantomConfig, gen_phantom_pair
from glfc.tensor import Tensor


def test_hu_endpoints():
    assert hu_to_norm(-1024) == -1.0 and hu_to_norm(3000) == 1.0
    assert hu_to_norm(-5000) == -1.0 and hu_to_norm(9000) == 1.0


@settings(max_examples=50)
@given(st.floats(-1024, 3000))
def test_hu_roundtrip(h):
    assert norm_to_hu(hu_to_norm(h)) == pytest.approx(h, abs=1e-9)


def test_window_constants_lower_edge():
    # the soft lower edge agrees with -250 HU; the upper one is off by ~1.2e-3 (see notes)
    assert abs(hu_to_norm(-250) - SOFT.lo) < 5e-4


def test_degenerate_window():
    with pytest.raises(ContractError):
        IntensityWindow(0.5, 0.5)


def test_renormalize_maps_window_to_unit_range():
    p = Tensor(np.array([SOFT.lo, SOFT.hi, 0.9, -1.0]))
    np.testing.assert_allclose(window_renormalize(p, SOFT).data, [-1, 1, 1, -1], atol=1e-12)
    np.testing.assert_allclose(window_renormalize(p, GLOBAL).data, p.data)


def _independent_l1(p, y, lo, hi):
    f = lambda a: np.clip((a - lo) / (hi - lo) * 2 - 1, -1, 1)
    return np.mean(np.abs(f(p) - f(y)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_mcl_is_sum_of_terms(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.uniform(-1, 1, (2, 1, 6, 6)), rng.uniform(-1, 1, (2, 1, 6, 6))
    total, terms = mcl_loss(Tensor(p), Tensor(y))
    ref = sum(_independent_l1(p, y, w.lo, w.hi) for w in (GLOBAL, SOFT, BONE))
    assert abs(total.item() - ref) < 1e-12
    assert abs(total.item() - sum(terms.values())) < 1e-12


def test_mcl_zero_at_target():
    y = np.random.default_rng(0).uniform(-1, 1, (1, 1, 5, 5))
    assert mcl_loss(Tensor(y), Tensor(y.copy()))[0].item() == 0.0


def test_ssim_identical_is_one():
    a = np.random.default_rng(0).uniform(-1, 1, (32, 32))
    np.testing.assert_allclose(ssim_map(a, a), 1.0)
    m = np.ones_like(a, bool)
    assert masked_ssim(a, a, m) == pytest.approx(1.0)
    assert masked_psnr(a, a, m) == math.inf


def test_psnr_known_value():
    a = np.zeros((8, 8))
    assert masked_psnr(a + 0.2, a, np.ones_like(a, bool)) == pytest.approx(10 * math.log10(4 / 0.04))


def test_ssim_is_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(-1, 1, (24, 24)), rng.uniform(-1, 1, (24, 24))
    np.testing.assert_allclose(ssim_map(a, b), ssim_map(b, a))


def test_metric_shape_mismatch():
    with pytest.raises(ShapeError):
        masked_ssim(np.zeros((4, 4)), np.zeros((4, 5)), np.ones((4, 4), bool))


def test_body_mask_keeps_largest_component_and_fills_holes():
    img = np.full((20, 20), -1000.0)
    img[2:12, 2:12] = 0.0
    img[5:8, 5:8] = -1000.0   # hole
    img[16:18, 16:18] = 0.0   # speck
    m = body_mask(img)
    assert m[6, 6] and not m[17, 17] and m.sum() == 100


def test_region_masks_match_phantom_labels():
    ct, _, labels = gen_phantom_pair(PhantomConfig(size=64, seed=3))
    masks = region_masks_from_ct(ct.voxels)
    np.testing.assert_array_equal(masks["ST"], labels == 1)
    np.testing.assert_array_equal(masks["bone"], labels == 2)


def test_empty_body_is_evaluation_error():
    air = np.full((16, 16), -1000.0)
    with pytest.raises(EvaluationError):
        evaluate_pair(air, air)


def test_evaluate_pair_perfect_prediction():
    ct, _, _ = gen_phantom_pair(PhantomConfig(size=64, seed=1))
    rep = evaluate_pair(ct.voxels, ct.voxels)
    assert rep.ssim["full"] == pytest.approx(1.0) and rep.psnr["full"] == math.inf
    assert rep.mae_hu == 0.0
    table = format_table({"CT": rep})
    assert "SSIM (%)" in table and "100.00" in table
