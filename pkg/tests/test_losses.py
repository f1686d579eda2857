import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uncseg.errors import ShapeError, UsageError
from uncseg.losses import (
    LossWeights,
    combined_loss,
    combined_loss_grad,
    corr_coeff,
    corr_coeff_grad,
    dice_ce_loss,
    dice_ce_loss_grad,
    rmsd_loss,
    rmsd_loss_grad,
    uncertainty_terms,
)


def test_dice_ce_hand_computed_two_voxels():
    # two voxels, two classes, logits 0 => p = 0.5 everywhere; labels (1, 0)
    logits = np.zeros((1, 2, 2, 1, 1))
    labels = np.array([1, 0]).reshape(1, 2, 1, 1)
    smooth = 1e-5
    dice = (2 * 0.5 + smooth) / (1.0 + 1.0 + smooth)
    expected = (1 - dice) + np.log(2)
    assert dice_ce_loss(logits, labels) == pytest.approx(expected, rel=1e-12)


def test_dice_ce_near_zero_for_confident_correct():
    labels = np.array([1, 0, 2]).reshape(1, 3, 1, 1)
    logits = np.full((1, 3, 3, 1, 1), -30.0)
    for v, lab in enumerate(labels.ravel()):
        logits[0, lab, v] = 30.0
    assert dice_ce_loss(logits, labels) < 1e-6


def test_dice_ce_rejects_out_of_range_label():
    with pytest.raises(ShapeError):
        dice_ce_loss(np.zeros((1, 2, 1, 1, 1)), np.full((1, 1, 1, 1), 3))


def test_rmsd_half_target():
    e = np.zeros((4, 4, 4))
    e[1:4, 1:4, 1:4] = 1 / 27  # a corner of a smoothed single error voxel
    m = np.ones_like(e)
    u = e / 2
    expected = 0.5 * np.sqrt((e**2).sum() / (m.sum() + 1e-6))
    assert rmsd_loss(u, e, m) == pytest.approx(expected, rel=1e-12)


def test_rmsd_arithmetic_example():
    u = np.array([0.2, 0.5])
    e = np.array([0.0, 0.1])
    m = np.ones(2)
    assert rmsd_loss(u, e, m, eps=0) == pytest.approx(np.sqrt((0.04 + 0.16) / 2))


def test_corr_constant_inputs_give_zero():
    m = np.ones(5)
    assert corr_coeff(np.full(5, 0.3), np.arange(5.0), m) == 0.0
    assert corr_coeff(np.arange(5.0), np.zeros(5), m) == 0.0
    assert corr_coeff(np.arange(5.0), np.arange(5.0), np.zeros(5)) == 0.0


def test_corr_only_looks_inside_mask():
    u = np.array([1.0, 2.0, 3.0, 100.0])
    e = np.array([1.0, 2.0, 3.0, -100.0])
    assert corr_coeff(u, e, np.array([1, 1, 1, 0])) == pytest.approx(1.0, abs=1e-6)


def test_combined_total_arithmetic():
    # dce 0.2, rmsd 0.1, corr 0.5 -> 0.2 + 0.1 * 0.1 + 0.01 * (1 - 0.5) = 0.215
    w = LossWeights()
    assert 0.2 + w.lambda_rmsd * 0.1 + w.lambda_corr * (1 - 0.5) == pytest.approx(0.215)
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((1, 3, 3, 3, 3))
    labels = rng.integers(0, 3, (1, 3, 3, 3))
    u, e, m = rng.random((3, 3, 3)), rng.random((3, 3, 3)), np.ones((3, 3, 3))
    b = combined_loss(logits, labels, u, e, m, w)
    assert b.total == pytest.approx(b.dce + 0.1 * b.rmsd + 0.01 * (1 - b.corr), rel=1e-12)
    assert b.total - b.dce == pytest.approx(uncertainty_terms(u, e, m, w), rel=1e-12)


def test_zero_weights_leave_only_dce():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((1, 2, 2, 2, 2))
    labels = rng.integers(0, 2, (1, 2, 2, 2))
    u, e, m = rng.random((2, 2, 2)), rng.random((2, 2, 2)), np.ones((2, 2, 2))
    b, _, du = combined_loss_grad(logits, labels, u, e, m, LossWeights(0, 0))
    assert b.total == b.dce and not du.any()


def test_weights_validation():
    with pytest.raises(UsageError):
        LossWeights(-1.0)
    with pytest.raises(UsageError):
        LossWeights(epsilon=0)


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def test_dice_ce_gradient_matches_fd():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((2, 3, 2, 2, 2))
    labels = rng.integers(0, 3, (2, 2, 2, 2))
    _, g = dice_ce_loss_grad(logits, labels)
    assert np.allclose(g, _fd(lambda z: dice_ce_loss(z, labels), logits), atol=1e-8)


def test_unc_gradients_match_fd():
    rng = np.random.default_rng(3)
    u, e = rng.random((3, 3, 3)), rng.random((3, 3, 3))
    m = (rng.random((3, 3, 3)) > 0.3).astype(float)
    _, gr = rmsd_loss_grad(u, e, m)
    _, gc = corr_coeff_grad(u, e, m)
    assert np.allclose(gr, _fd(lambda x: rmsd_loss(x, e, m), u), atol=1e-8)
    assert np.allclose(gc, _fd(lambda x: corr_coeff(x, e, m), u), atol=1e-8)


arrays = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=60, deadline=None)
@given(arrays, st.floats(0.1, 10), st.floats(-5, 5))
def test_corr_bounds_and_affine_invariance(rng, scale, shift):
    u, e = rng.random(30), rng.random(30)
    m = (rng.random(30) > 0.2).astype(float)
    m[:3] = 1
    r = corr_coeff(u, e, m)
    assert abs(r) <= 1 + 1e-6
    assert rmsd_loss(u, e, m) >= 0
    assert corr_coeff(scale * u + shift, e, m) == pytest.approx(r, abs=1e-6)
    assert corr_coeff(u, u, m) == pytest.approx(1.0, abs=1e-6)
