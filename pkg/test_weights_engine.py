import math

import numpy as np
import pytest

from weights_engine import (
    compute_weights, dirichlet_kernel, neighbourhood_sum, normalizer_h, shifted_mass_bound,
    weight_certificates,
)


def neumann_weights(m: int, rho: float, radius: int, tol: float = 1e-17) -> dict:
    """lambda via the geometric series of repeated box convolutions (d = 1)."""
    vol = 2 * m + 1
    p_max = int(math.ceil(math.log(tol) / math.log(1.0 / rho))) + 1
    L = radius + p_max * m
    term = np.zeros(2 * L + 1)
    term[L] = 1.0
    total = np.zeros_like(term)
    box = np.ones(vol)
    for _ in range(p_max):
        total += term
        term = np.convolve(term, box, mode="same") / (rho * vol)
    lam = (rho - 1.0) / rho * total
    return {j: lam[L + j] for j in range(-radius, radius + 1)}


def test_dirichlet_kernel_limits():
    assert dirichlet_kernel(0.0, 3) == pytest.approx(7.0)
    assert dirichlet_kernel(1e-12, 2) == pytest.approx(5.0)
    theta = 0.7
    direct = sum(math.cos(theta * k) for k in range(-2, 3))
    assert dirichlet_kernel(theta, 2) == pytest.approx(direct, abs=1e-12)
    assert dirichlet_kernel([0.3, 0.4], 1) == pytest.approx(
        dirichlet_kernel(0.3, 1) * dirichlet_kernel(0.4, 1))


def test_dirichlet_kernel_at_its_zeros_and_extremes():
    assert dirichlet_kernel(np.pi, 1) == pytest.approx(-1.0, abs=1e-12)
    assert dirichlet_kernel(2 * np.pi / 3, 1) == pytest.approx(0.0, abs=1e-12)
    assert dirichlet_kernel((np.pi, 0.0), 1) == pytest.approx(-3.0, abs=1e-12)


def test_normalizer_h_at_m_zero_is_closed_form():
    # kappa~ = 1 for m = 0: h = rho - 1
    assert normalizer_h(0, 2.0, 1) == pytest.approx(1.0, rel=1e-12)
    assert normalizer_h(0, 1.5, 2) == pytest.approx(0.5, rel=1e-12)


def test_normalizer_h_floor():
    for m in (1, 2, 3):
        for rho in (1.5, 2.0):
            assert normalizer_h(m, rho, 1) >= (2 * m + 1) * (rho - 1) * (1 - 1e-12)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
@pytest.mark.parametrize("rho", [1.5, 2.0])
def test_weight_identities(m, rho):
    w = compute_weights(m, rho, 1)
    cert = weight_certificates(w)
    assert cert["positivity"]
    assert abs(cert["sum_identity"]["grid_sum"] - 1.0) <= 1e-8
    assert cert["sum_identity"]["stored_sum"] <= 1.0 + 1e-8
    assert cert["min_convolution_slack"] >= -1e-8
    assert cert["passed"]
    assert cert["lower_bound_passed"]
    if m >= 3:
        assert (2 * m + 1) * w.get((0,)) >= 0.9 * (rho - 1) / rho ** 2


@pytest.mark.parametrize("m", [1, 2, 3, 4])
@pytest.mark.parametrize("rho", [1.5, 2.0])
def test_quadrature_matches_neumann_series(m, rho):
    w = compute_weights(m, rho, 1)
    oracle = neumann_weights(m, rho, w.window_radius)
    for j, value in oracle.items():
        assert w.get((j,)) == pytest.approx(value, abs=1e-8)


def test_weights_symmetric_and_decreasing_in_2d():
    w = compute_weights(1, 2.0, 2)
    assert w.get((1, 2)) == pytest.approx(w.get((-2, -1)), abs=1e-14)
    assert w.get((0, 0)) > w.get((2, 0)) > w.get((4, 0))
    assert weight_certificates(w)["passed"]


def test_convolution_slack_is_scale_at_origin():
    w = compute_weights(2, 2.0, 1)
    slack0 = w.rho * 5 * w.get((0,)) - neighbourhood_sum(w, (0,))
    assert slack0 == pytest.approx(w.scale, rel=1e-8)


def test_shifted_mass_bound_holds_for_nonnegative_inputs():
    rng = np.random.default_rng(3)
    w = compute_weights(1, 1.5, 1)
    for _ in range(20):
        upsilon = {(j,): float(x) for j, x in zip(range(-3, 4), rng.random(7))}
        lhs, rhs = shifted_mass_bound(w, upsilon)
        assert lhs <= rhs + 1e-12


def test_compute_weights_rejects_bad_inputs():
    with pytest.raises(ValueError):
        compute_weights(1, 1.0, 1)
    with pytest.raises(ValueError):
        compute_weights(3, 2.0, 1, window=2)
