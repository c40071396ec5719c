import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s8bq.codebook import Codebook, Region, derive_regions, fit_codebook
from s8bq.regularizer import (
    finite_difference_check,
    gradient_decay_profile,
    kink_distance,
    mracos,
    mracos_elementwise,
    mracos_grad,
    mracos_loss,
)

LAM = 5e-4


def make_codebook(nums, scale=1.0, lam=LAM, bit_width=8):
    return Codebook(bit_width, scale, tuple(nums), tuple(derive_regions(nums, lam)))


@pytest.fixture
def tri():
    return make_codebook([-64, 0, 64])


@pytest.fixture
def gaussian_cb():
    return fit_codebook(np.random.default_rng(4).normal(0, 0.25, 20000), 5, LAM)


def test_loss_zero_at_centroids(gaussian_cb):
    res = mracos(gaussian_cb.centroids, gaussian_cb)
    assert res.loss <= 1e-12
    assert np.all(np.abs(res.grad) <= 1e-12)


def test_grad_exactly_zero_on_power_of_two_grid(tri):
    res = mracos([-0.5, 0.0, 0.5], tri)
    assert res.loss == 0.0
    assert res.grad.tolist() == [0.0, 0.0, 0.0]


def test_midpoint_costs_lambda_and_has_zero_subgradient(tri):
    res = mracos([-0.25, 0.25], tri)
    assert res.loss == pytest.approx(2 * LAM, rel=1e-15)
    assert res.grad.tolist() == [0.0, 0.0]


def test_two_weight_example():
    cb = Codebook(8, 1.0, (-64, 0, 64), (Region(-0.75, 0.75, 2.0, LAM),))
    expected = LAM * ((1 - abs(math.cos(0.2 * math.pi))) + (1 - abs(math.cos(0.6 * math.pi))))
    assert mracos_loss([0.1, 0.3], cb) == pytest.approx(expected, rel=1e-14)


def test_out_of_region_weights_are_ignored_and_counted(tri):
    res = mracos([-0.9, 0.8, 0.75, 0.1], tri)
    assert res.clipped_count == 3
    np.testing.assert_array_equal(res.grad[:3], 0.0)
    assert res.loss == pytest.approx(mracos_loss([0.1], tri), rel=1e-15)


def test_boundary_belongs_to_right_region():
    cb = make_codebook([-64, 0, 64, 96])
    lo_bounds = [r.lo for r in cb.regions]
    res = mracos(np.array(lo_bounds), cb)
    assert res.clipped_count == 0


def test_normalized_variant_is_mean(gaussian_cb):
    w = np.random.default_rng(1).normal(0, 0.25, 500)
    total = mracos(w, gaussian_cb)
    mean = mracos(w, gaussian_cb, normalize=True)
    assert mean.loss == pytest.approx(total.loss / w.size, rel=1e-14)
    np.testing.assert_allclose(mean.grad, total.grad / w.size, rtol=1e-15)


def test_scale_enters_through_chain_rule():
    w = np.random.default_rng(2).uniform(-0.7, 0.7, 200)
    a = make_codebook([-64, 0, 64], scale=1.0)
    b = make_codebook([-64, 0, 64], scale=2.0)
    assert mracos_loss(w, a) == pytest.approx(mracos_loss(2 * w, b), rel=1e-13)
    np.testing.assert_allclose(mracos_grad(w, a), 2 * mracos_grad(2 * w, b), rtol=1e-12, atol=1e-18)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("bits", [3, 4, 5])
def test_gradient_matches_finite_differences(seed, bits):
    rng = np.random.default_rng(seed)
    cb = fit_codebook(rng.normal(0, 0.25, 5000), bits, LAM)
    pts = rng.uniform(-1.05 * cb.scale, 1.05 * cb.scale, 1000)
    check = finite_difference_check(pts, cb, h=1e-6, exclude=1e-4)
    assert check.max_rel_error < 1e-5
    assert check.n_checked + check.n_excluded == 1000
    assert check.n_checked > 900


def test_finite_difference_check_catches_perturbation(gaussian_cb):
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, 1000)
    grad = mracos_grad(pts, gaussian_cb) * (1 + 1e-3)
    assert finite_difference_check(pts, gaussian_cb, grad=grad).max_rel_error > 1e-5


def test_kink_distance_excludes_cos_zeros(tri):
    d = kink_distance([0.25, 0.25 + 1e-5, 0.0], tri)
    assert d[0] == 0.0
    assert d[1] == pytest.approx(1e-5, rel=1e-6)
    assert d[2] == pytest.approx(0.25)


def xi_rule_sign(x):
    """(-1)^xi with xi = 0 on intervals where cos(pi*x) is positive."""
    xi = np.floor(x + 0.5) % 2
    return np.where(xi == 0, 1.0, -1.0)


def test_sign_of_cos_equals_interval_rule():
    x = np.random.default_rng(9).uniform(-40, 40, 10_000)
    away = np.abs(x - np.floor(x) - 0.5) > 1e-9
    np.testing.assert_array_equal(xi_rule_sign(x)[away], np.sign(np.cos(np.pi * x))[away])


def test_gradient_equals_literal_formula(gaussian_cb):
    w = np.random.default_rng(8).uniform(-gaussian_cb.scale, gaussian_cb.scale, 10_000)
    grad = mracos_grad(w, gaussian_cb)
    u = w / gaussian_cb.scale
    expected = np.zeros_like(w)
    for r in gaussian_cb.regions:
        m = (u >= r.lo) & (u < r.hi)
        x = r.theta * (u[m] - r.anchor)
        expected[m] = r.lam * np.pi * r.theta * xi_rule_sign(x) * np.sin(np.pi * x) / gaussian_cb.scale
    np.testing.assert_allclose(grad, expected, rtol=1e-9, atol=1e-15)


def test_periodicity_within_region():
    cb = make_codebook(list(range(-64, 65, 8)))
    (r,) = cb.regions
    w = np.random.default_rng(5).uniform(r.lo, r.hi - 1.0 / r.theta, 1000)
    a = mracos_elementwise(w, cb)
    b = mracos_elementwise(w + 1.0 / r.theta, cb)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.49))
def test_descent_step_moves_toward_centroid(frac):
    cb = make_codebook([-64, 0, 64])
    period = 0.5
    for sign in (1.0, -1.0):
        w = np.array([sign * frac * period])
        g = mracos_grad(w, cb)
        assert np.sign(g[0]) == sign
        moved = w - 1e-3 * g
        assert abs(moved[0]) < abs(w[0])


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.7, 0.7), st.sampled_from([4, 8, 16, 32]), st.floats(1e-4, 1e-1))
def test_descent_distance_non_increasing_below_stability_bound(u0, gap, lam):
    cb = make_codebook(list(range(-128 + gap, 128 - gap + 1, gap)), lam=lam)
    theta = 128 / gap
    lr = 0.9 / (lam * np.pi**2 * theta**2)
    cents = cb.centroids
    w = np.array([u0])
    if mracos(w, cb).clipped_count:
        return
    dist = np.min(np.abs(cents - w[0]))
    for _ in range(20):
        w = w - lr * mracos_grad(w, cb)
        d = np.min(np.abs(cents - w[0]))
        assert d <= dist + 1e-15
        dist = d


def test_decay_profile_ratio():
    cb = Codebook(8, 1.0, (0, 64), (Region(-0.1, 0.25, 128.0, LAM), Region(0.25, 0.75, 2.0, LAM)))
    prof = gradient_decay_profile(cb)
    assert prof[0] / prof[1] == pytest.approx(64.0)
    assert gradient_decay_profile(make_codebook([0])).size == 1


def test_decay_profile_outer_regions_weaker(gaussian_cb):
    prof = gradient_decay_profile(gaussian_cb)
    thetas = np.array([r.theta for r in gaussian_cb.regions])
    assert np.all(np.diff(prof)[np.diff(thetas) != 0] != 0)
    # the dense middle of a Gaussian gets the strongest pull
    mid = len(prof) // 2
    assert prof[0] < prof[mid] and prof[-1] < prof[mid]
