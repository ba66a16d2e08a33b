import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereodepth import field_core as fc
from stereodepth import losses as L
from stereodepth.field_core import FieldError


def image(seed, h=10, w=14):
    return np.random.default_rng(seed).uniform(0.1, 0.9, size=(h, w, 3))


def test_default_weight_values():
    w = L.LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3) == (1.0, 0.0008, 0.001)
    assert (w.alpha1, w.alpha2, w.beta_c, w.beta_f) == (0.1, 0.15, 2.0, 1.0)
    with pytest.raises(FieldError):
        L.LossWeights(lambda1=-1.0)
    with pytest.raises(FieldError):
        L.LossWeights(alpha2=1.5)


def test_coarse_reconstruction_examples():
    a = image(0)
    assert L.loss_coarse_reconstruction(a, a).value == 0.0
    assert L.loss_coarse_reconstruction(a + 0.1, a, alpha1=0.0).value == pytest.approx(0.1, abs=1e-12)
    assert L.loss_coarse_reconstruction(image(1), a).value > L.loss_coarse_reconstruction(image(1), a, alpha1=0.0).value
    with pytest.raises(FieldError):
        L.loss_coarse_reconstruction(a, a[:, :-1])


def test_ssim_identical_is_one():
    a = image(2)
    np.testing.assert_allclose(L.ssim(a, a).value, 1.0, atol=1e-12)
    np.testing.assert_allclose(L.ssim(a, a, np.ones(a.shape[:2])).value, 1.0, atol=1e-12)


def test_ssim_symmetric_and_bounded():
    a, b = image(3), image(4)
    s = L.ssim(a, b).value
    np.testing.assert_allclose(s, L.ssim(b, a).value, atol=1e-14)
    assert np.all(s <= 1 + 1e-12) and np.all(s >= -1 - 1e-12)


def test_ssim_inverted_checkerboard_is_negative():
    board = ((np.indices((6, 6)).sum(0) % 2) == 0).astype(float)
    a = np.repeat(board[..., None], 3, axis=-1)
    s = L.ssim(a, 1.0 - a).value
    assert np.all(s < 0)


def test_fine_reconstruction_examples():
    a = image(5)
    ones = np.ones(a.shape[:2])
    assert L.loss_fine_reconstruction(a, a, ones, ones).value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(FieldError, match="masked"):
        L.loss_fine_reconstruction(a, a, np.zeros_like(ones), ones)


def test_fine_reconstruction_ignores_masked_pixels():
    rng = np.random.default_rng(6)
    est, ref = image(6), image(7)
    mask = (rng.uniform(size=est.shape[:2]) > 0.3).astype(float)
    base = L.loss_fine_reconstruction(est, ref, mask, np.ones_like(mask)).value
    garbage = est.copy()
    garbage[mask == 0] = rng.uniform(-50, 50, size=(int((mask == 0).sum()), 3))
    garbage_ref = ref.copy()
    garbage_ref[mask == 0] = np.nan
    other = L.loss_fine_reconstruction(garbage, garbage_ref, mask, np.ones_like(mask)).value
    assert other == pytest.approx(base, abs=1e-12)


def test_fine_reconstruction_map_blend():
    est, ref = image(8), image(9)
    l1 = np.abs(est - ref).mean(-1)
    dssim = (1 - L.ssim(est, ref).value) / 2
    np.testing.assert_allclose(L.fine_reconstruction_map(est, ref, 0.15).value, 0.15 * l1 + 0.85 * dssim, atol=1e-14)


def test_smoothness_examples():
    img = np.full((5, 8, 3), 0.5)
    assert L.loss_coarse_smooth(np.full((5, 8), 7.0), img).value == 0.0
    ramp = np.tile(3.0 * np.arange(8.0), (5, 1))
    per_pixel = L.smoothness_map(ramp, img, 2.0).value
    np.testing.assert_allclose(per_pixel[:, :-1], 3.0, atol=1e-12)
    np.testing.assert_array_equal(per_pixel[:, -1], 0.0)
    assert L.loss_coarse_smooth(ramp, img).value == pytest.approx(3.0 * 7 / 8, abs=1e-12)


def test_smoothness_is_edge_aware():
    img = np.zeros((4, 6, 3))
    img[:, 3:] = 1.0
    step = np.zeros((4, 6))
    step[:, 3:] = 1.0
    aligned = L.loss_coarse_smooth(step, img, beta_c=2.0).value
    plain = L.loss_coarse_smooth(step, np.zeros_like(img), beta_c=2.0).value
    assert aligned == pytest.approx(plain * np.exp(-2.0), rel=1e-12)


def test_fine_smooth_weights():
    img = np.full((5, 8, 3), 0.5)
    ramp = np.tile(np.arange(8.0), (5, 1))
    ones = np.ones((5, 8))
    plain = L.loss_coarse_smooth(ramp, img, beta_c=1.0).value
    assert L.loss_fine_smooth(ramp, img, ones, ones).value == pytest.approx(plain, abs=1e-12)
    assert L.loss_fine_smooth(ramp, img, np.zeros((5, 8)), ones).value == pytest.approx(2 * plain, abs=1e-12)
    rng = np.random.default_rng(0)
    const = np.full((5, 8), 3.0)
    assert L.loss_fine_smooth(const, img, rng.uniform(size=(5, 8)), ones).value == 0.0


def test_total_loss_weights_and_modes():
    terms = L.LossTerms(1.0, 1.0, 1.0, 1.0)
    assert L.total_loss(terms).value == pytest.approx(2.0018, abs=1e-12)
    assert L.total_loss(L.LossTerms()).value == 0.0
    assert L.total_loss(terms, mode="ddc-only").value == pytest.approx(1.0008, abs=1e-12)
    assert L.total_loss(terms, mode="cdc-only").value == pytest.approx(1.001, abs=1e-12)
    with pytest.raises(FieldError):
        L.total_loss(terms, mode="nope")


def test_total_loss_reports_non_finite_terms():
    with pytest.raises(L.NonFiniteLossError) as info:
        L.total_loss(L.LossTerms(1.0, float("nan"), 1.0, 1.0))
    assert np.isnan(info.value.terms["L_FR"])
    # an unused branch may hold anything
    assert L.total_loss(L.LossTerms(1.0, float("nan"), 1.0, float("inf")), mode="ddc-only").value == pytest.approx(1.0008)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_losses_are_nonnegative(seed):
    a, b = image(seed, 6, 9), image(seed + 1, 6, 9)
    d = np.random.default_rng(seed).uniform(1, 5, size=(6, 9))
    ones = np.ones((6, 9))
    assert L.loss_coarse_reconstruction(a, b).value >= 0
    assert L.loss_fine_reconstruction(a, b, ones, ones).value >= 0
    assert L.loss_coarse_smooth(d, a).value >= 0
    assert L.loss_fine_smooth(d, a, ones, ones).value >= 0


def test_pyramid_features_shapes():
    feats = L.GaussianPyramidFeatures()(fc.Var(image(1, 16, 20)))
    assert [f.shape for f in feats] == [(16, 20, 3), (8, 10, 3), (4, 5, 3)]
