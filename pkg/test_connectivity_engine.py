import math

import numpy as np
import pytest

from connectivity_engine import (
    ConnSpace, ConnectionField, GibbsModel, Potential, active_bonds, enumerate_exact,
    expected_row_degree, gibbs_conditional_energy, metropolis_sample, null_prob,
    phi_tail_epsilon, sample_base_field, sweep_kernel_apply, total_energy,
)
from errors import ConfigError, StateSpaceTooLarge
from lattice_engine import TorusSpec, cube_offsets, site_index

SPACE = ConnSpace.binary(1.0)


def pair_model(**kw) -> GibbsModel:
    """Nearest-neighbour bond pair plus a self-bond field on a 1-d torus."""
    return GibbsModel(potentials=[
        Potential(shape=[((0,), (1,)), ((1,), (-1,))], table={(1, 1): -0.8}),
        Potential(shape=[((0,), (0,))], table={(1,): 0.4}),
    ], **kw)


def test_conn_space_validation():
    with pytest.raises(ConfigError):
        ConnSpace([0, 1], 0, [[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(ConfigError):
        ConnSpace([0, 1, 2], 0, [[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    space = ConnSpace([0, 1, 2], 0, [[0, 1, 2], [1, 0, 1], [2, 1, 0]], weights=[3, 1])
    assert space.C_J == 2.0
    assert space.non_null_probs() == pytest.approx([0.75, 0.25])


def test_model_validation():
    with pytest.raises(ConfigError):
        GibbsModel(gamma=1.0)
    with pytest.raises(ConfigError):
        GibbsModel(upsilon=0.0)
    with pytest.raises(ConfigError):
        GibbsModel(p_near=1.5)


def test_null_prob_shape():
    model = GibbsModel(upsilon=0.01, gamma=1.01, m0=1, p_near=0.3)
    assert null_prob((0,), model) == 0.3
    expected = math.exp(-0.01 * math.exp(3 ** 1.01))
    assert null_prob((1,), model) == pytest.approx(expected)
    assert null_prob((-1,), model) == null_prob((1,), model)
    assert null_prob((2,), model) < null_prob((1,), model)
    # doubly exponential decay underflows to exactly zero
    assert null_prob((40,), GibbsModel()) == 0.0


def test_base_field_frequencies_match_null_prob():
    spec = TorusSpec(1, 2)
    model = GibbsModel(upsilon=0.01, gamma=1.01, p_near=0.5)
    draws = 2000
    counts = np.zeros(spec.volume())
    for r in range(draws):
        f = sample_base_field(spec, model, seed=11, space=SPACE, replica=r)
        src, off, _, _ = f.edges()
        counts += np.bincount(off, minlength=spec.volume())
    trials = draws * spec.volume()
    for c, k in enumerate(cube_offsets(1, 2)):
        p = null_prob(k, model)
        sd = math.sqrt(max(p * (1 - p), 1e-12) / trials)
        assert abs(counts[c] / trials - p) <= 4 * sd + 1e-9


def test_row_degree_matches_expectation():
    spec = TorusSpec(1, 3)
    model = GibbsModel(upsilon=0.01, gamma=1.01, p_near=0.5)
    degrees = [
        len(sample_base_field(spec, model, 5, SPACE, r)) / spec.volume()
        for r in range(500)
    ]
    mu = expected_row_degree(spec, model)
    sd = np.std(degrees) / math.sqrt(len(degrees))
    assert abs(np.mean(degrees) - mu) <= 4 * sd + 1e-9


def test_base_field_is_deterministic_per_replica():
    spec = TorusSpec(1, 2)
    model = GibbsModel(upsilon=0.01, gamma=1.01)
    a = sample_base_field(spec, model, 3, SPACE, 4)
    b = sample_base_field(spec, model, 3, SPACE, 4)
    c = sample_base_field(spec, model, 3, SPACE, 5)
    assert a.entries() == b.entries()
    assert a.entries() != c.entries()


def test_field_entries_shift_and_truncation():
    spec = TorusSpec(1, 2)
    f = ConnectionField.from_entries(spec, SPACE, {((0,), (1,)): 1, ((2,), (-2,)): 1,
                                                  ((1,), (5,)): 1})
    assert f.entries() == {((0,), (1,)): 1, ((2,), (-2,)): 1}
    g = f.shifted((1,))
    # row j of the shifted field is row j+1 of the original
    assert g.entries() == {((-1,), (1,)): 1, ((1,), (-2,)): 1}
    assert f.truncated(1).entries() == {((0,), (1,)): 1}
    src, off, dst, elem = f.edges()
    assert list(src) == [site_index((0,), spec), site_index((2,), spec)]
    assert dst[0] == site_index((1,), spec)
    assert dst[1] == site_index((0,), spec)


def test_energy_helpers_on_a_hand_built_field():
    spec = TorusSpec(1, 1)
    model = pair_model()
    f = ConnectionField.from_entries(spec, SPACE, {((0,), (1,)): 1, ((1,), (-1,)): 1,
                                                  ((0,), (0,)): 1})
    # one satisfied pair (-0.8) and one self bond (+0.4)
    assert total_energy(f, model, 1) == pytest.approx(-0.4)
    assert gibbs_conditional_energy(f, [((0,), (0,))], model, 1) == pytest.approx(0.4)
    # zeta(0) hides the pair potential's offsets
    assert total_energy(f, model, 0) == pytest.approx(0.4)


def test_enumerate_exact_respects_state_limit():
    with pytest.raises(StateSpaceTooLarge):
        enumerate_exact(TorusSpec(1, 3), GibbsModel(), 3, SPACE)


def test_sweep_kernel_preserves_exact_distribution():
    spec = TorusSpec(1, 1)
    model = pair_model(upsilon=0.01, gamma=1.01)
    exact = enumerate_exact(spec, model, 1, SPACE)
    assert exact.probs.sum() == pytest.approx(1.0)
    out = sweep_kernel_apply(exact, model, exact.probs, SPACE)
    assert 0.5 * np.abs(out - exact.probs).sum() <= 1e-10
    # a point mass is moved but stays a probability vector
    delta = np.zeros_like(exact.probs)
    delta[0] = 1.0
    moved = sweep_kernel_apply(exact, model, delta, SPACE)
    assert moved.sum() == pytest.approx(1.0)
    assert np.all(moved >= -1e-15)


def _chain_marginals(model, sweeps, burn=200):
    spec = TorusSpec(1, 1)
    trace = []
    metropolis_sample(spec, model, 1, sweeps, seed=9, space=SPACE, replica=0, trace=trace)
    return np.mean(np.array(trace[burn:]) == 1, axis=0)


def test_metropolis_marginals_close_to_exact():
    model = pair_model(upsilon=0.01, gamma=1.01)
    exact = enumerate_exact(TorusSpec(1, 1), model, 1, SPACE)
    marg = _chain_marginals(model, 20000)
    assert np.max(np.abs(marg - exact.marginals(1))) <= 0.03


@pytest.mark.slow
def test_metropolis_marginals_long_chain():
    model = pair_model(upsilon=0.01, gamma=1.01)
    exact = enumerate_exact(TorusSpec(1, 1), model, 1, SPACE)
    marg = _chain_marginals(model, 100000)
    assert np.max(np.abs(marg - exact.marginals(1))) <= 0.02


def test_metropolis_leaves_inactive_bonds_at_base_draw():
    spec = TorusSpec(1, 2)
    model = pair_model(upsilon=0.01, gamma=1.01)
    base = sample_base_field(spec, model, 4, SPACE, 0)
    chain = metropolis_sample(spec, model, 1, 5, 4, SPACE, 0)
    inactive = [c for c, k in enumerate(cube_offsets(1, 2)) if abs(k[0]) > 1]
    def outside(f):
        return {b: e for b, e in f.bonds.items() if b[1] in inactive}

    assert outside(chain) == outside(base)
    assert len(active_bonds(spec, 1)) == 5 * 3


def test_phi_tail_epsilon():
    model = pair_model()
    assert phi_tail_epsilon(model, 0) == pytest.approx(0.8)
    assert phi_tail_epsilon(model, 1) == 0.0


def test_distinct_bonds_are_uncorrelated_under_the_base_law():
    spec = TorusSpec(1, 2)
    model = GibbsModel(upsilon=0.01, gamma=1.01, p_near=0.5)
    zero, one = site_index((0,), spec), site_index((1,), spec)
    pairs = [((0, zero), (1, zero)),   # same offset, different rows
             ((0, zero), (0, one))]    # same row, different offsets
    draws = 2000
    fields = [sample_base_field(spec, model, 21, SPACE, r) for r in range(draws)]
    for a, b in pairs:
        x = np.array([f.get(*a) != SPACE.null_index for f in fields], dtype=float)
        y = np.array([f.get(*b) != SPACE.null_index for f in fields], dtype=float)
        corr = np.corrcoef(x, y)[0, 1]
        assert abs(corr) <= 3 / math.sqrt(draws)


def test_base_field_stays_sparse_on_a_large_torus():
    spec = TorusSpec(2, 15)
    model = GibbsModel(upsilon=0.01, gamma=1.01, p_near=0.5)
    field = sample_base_field(spec, model, 2, SPACE, 0)
    expected = spec.volume() * expected_row_degree(spec, model)
    assert abs(len(field) - expected) <= 5 * math.sqrt(expected)
    # storage tracks the bonds present, far below |V_n|^2
    assert len(field) < spec.volume() * 20
    src, off, dst, elem = field.edges()
    assert len(src) == len(off) == len(dst) == len(elem) == len(field)
    assert np.all(np.diff(src) >= 0)
    assert np.all(field.offset_radii[off] <= 2)


def test_edges_wrap_destinations_around_the_torus():
    spec = TorusSpec(2, 15)
    f = ConnectionField.from_entries(spec, SPACE, {((15, -15), (1, -1)): 1})
    src, off, dst, elem = f.edges()
    assert dst[0] == site_index((-15, 15), spec)
    assert f.get(site_index((15, -15), spec), site_index((1, -1), spec)) == 1
    assert f.get(site_index((0, 0), spec), site_index((1, -1), spec)) == SPACE.null_index


def test_set_to_null_drops_the_bond():
    spec = TorusSpec(1, 1)
    f = ConnectionField.empty(spec, SPACE)
    f.set(0, 2, 1)
    assert len(f) == 1
    f.set(0, 2, SPACE.null_index)
    assert len(f) == 0
    assert f.bonds == {}


def test_table_and_from_table_agree():
    spec = TorusSpec(1, 2)
    model = GibbsModel(upsilon=0.01, gamma=1.01, p_near=0.5)
    f = sample_base_field(spec, model, 8, SPACE, 0)
    table = f.table()
    assert table.shape == (5, 5)
    assert int((table != SPACE.null_index).sum()) == len(f)
    assert ConnectionField.from_table(spec, SPACE, table).entries() == f.entries()
    with pytest.raises(ConfigError):
        ConnectionField.from_table(spec, SPACE, np.zeros((3, 3)))


def test_site_norm_sums_respect_the_offset_mask():
    spec = TorusSpec(1, 2)
    f = ConnectionField.from_entries(spec, SPACE, {((0,), (0,)): 1, ((0,), (2,)): 1,
                                                  ((1,), (-1,)): 1})
    everything = f.site_norm_sums(np.ones(spec.volume(), dtype=bool))
    assert everything[site_index((0,), spec)] == pytest.approx(2.0)
    assert everything[site_index((1,), spec)] == pytest.approx(1.0)
    far = f.site_norm_sums(f.offset_radii > 1)
    assert far.sum() == pytest.approx(1.0)
    assert far[site_index((0,), spec)] == pytest.approx(1.0)
