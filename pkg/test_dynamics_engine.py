import math

import numpy as np
import pytest

from connectivity_engine import ConnSpace
from dynamics_engine import (
    FhnParams, HebbParams, Trajectory, assumption_audit, drift_path, fhn_drift, hebbian_step,
    interaction_lambda, normalized_gain, recovery_path, recovery_step, scalar_map,
)
from errors import ConfigError

FHN = FhnParams()


def brownian_paths(count, steps=200, dt=0.005, seed=1):
    rng = np.random.default_rng(seed)
    inc = math.sqrt(dt) * rng.standard_normal((count, steps))
    return np.concatenate([np.zeros((count, 1)), np.cumsum(inc, axis=1)], axis=1)


def test_scalar_map_registry():
    assert scalar_map("tanh")(0.5) == pytest.approx(math.tanh(0.5))
    assert scalar_map("constant:2.5")(np.zeros(3)) == pytest.approx([2.5] * 3)
    with pytest.raises(ConfigError):
        scalar_map("relu")
    with pytest.raises(ConfigError):
        scalar_map("constant:abc")
    g = normalized_gain(scalar_map("constant:2"))
    assert g.sup == pytest.approx(1.0)
    assert g(0.0) == pytest.approx(1.0)


def test_parameter_validation():
    with pytest.raises(ConfigError):
        FhnParams(a=-0.1)
    with pytest.raises(ConfigError):
        HebbParams(g_ini=2.0, j_bar=1.0)
    with pytest.raises(ConfigError):
        HebbParams(j_dec=-1.0)


def test_recovery_path_matches_stepwise_update():
    U = brownian_paths(1)[0]
    w = recovery_path(U, FHN, 0.005)
    step = [0.0]
    for u in U[:-1]:
        step.append(recovery_step(step[-1], u, FHN, 0.005))
    assert w == pytest.approx(np.array(step), abs=1e-12)


def test_recovery_on_zero_path_is_exact():
    dt = 0.01
    U = np.zeros(101)
    w = recovery_path(U, FHN, dt)
    t = np.arange(101) * dt
    expected = FHN.a / FHN.c ** 2 * (1 - np.exp(-FHN.c * t))
    assert w == pytest.approx(expected, abs=1e-12)
    assert np.all(np.abs(w) <= FHN.drift_offset + 1e-15)


def test_fhn_drift_on_constant_path():
    dt = 0.01
    traj = Trajectory(dt, np.ones(51))
    t = 0.5
    w = (1 + FHN.a) / FHN.c ** 2 * (1 - math.exp(-FHN.c * t))
    assert fhn_drift(traj, FHN, t) == pytest.approx(1 - 1 / 3 - w, abs=1e-12)
    with pytest.raises(ValueError):
        traj.index_of(0.505)
    assert traj.sup_upto(0.2) == 1.0


def test_drift_path_is_causal():
    U = brownian_paths(1)[0]
    full = drift_path(U, FHN, 0.005)
    prefix = drift_path(U[:80], FHN, 0.005)
    assert full[:80] == pytest.approx(prefix, abs=1e-14)


def test_hebbian_decay_without_correlation():
    params = HebbParams(j_corr=0.0, j_dec=0.5, j_bar=1.0, g_ini=0.8)
    dt = 1e-3
    G = params.g_ini
    for k in range(1, 1001):
        G = hebbian_step(G, 0.3, -0.2, params, dt)
        if k % 250 == 0:
            assert G == pytest.approx(0.8 * math.exp(-0.5 * k * dt), abs=1e-6)


def test_hebbian_stays_in_box():
    rng = np.random.default_rng(2)
    params = HebbParams(j_corr=5.0, j_dec=0.1, j_bar=1.0, g_ini=0.5)
    cap = np.array([1.0, 0.5, 0.25, 1.0])
    G = params.initial_weight(cap)
    for _ in range(2000):
        x, y = rng.normal(scale=3.0, size=(2, 4))
        G = hebbian_step(G, x, y, params, 0.01, cap=cap)
        assert np.all(G >= 0.0)
        assert np.all(G <= cap)


def test_interaction_lambda_null_and_active():
    assert interaction_lambda(0, 0.7, 1.0, 2.0, FHN) == 0.0
    assert interaction_lambda(1, 0.7, 1.0, 2.0, FHN) == pytest.approx(
        0.7 * math.tanh(1.0) * math.tanh(2.0))


def test_assumption_audit_on_brownian_corpus():
    paths = brownian_paths(12)
    report = assumption_audit(FHN, paths, 0.005, ConnSpace.binary(1.0))
    assert report["n_paths"] == 12
    assert report["passed"]
    assert report["C_one_sided"] <= FHN.one_sided_constant + 1e-9
    assert report["affine_offset"] == pytest.approx(FHN.a / FHN.c ** 2)
    inter = report["interaction"]
    assert inter["C_J"] == 1.0
    assert max(inter[k] for k in ("lipschitz_second", "lipschitz_first",
                                  "connection", "absolute")) <= 1.0 + 1e-9


def test_strict_constant_blows_up_near_zero_while_affine_stays_bounded():
    # b ~ -a/c^2 on a path hugging zero from below
    U = np.concatenate([np.zeros(1), np.full(20, -1e-6)])
    report = assumption_audit(FHN, [U, np.zeros_like(U)], 0.05)
    assert report["passed"]
    assert report["C_absolute_strict"] > 1e3
    assert report["C_affine"] <= 1.0


def test_assumption_audit_empty_corpus():
    assert assumption_audit(FHN, [], 0.01) == {"n_paths": 0, "violations": [], "passed": True}
