"""
connectivity_engine.py — Sparse Random Connection Fields
=========================================================
Samples the connection field J^{n,j,k} between site j and offset k on the
torus V_n, and the Gibbs tilt of it built from finite-range potentials.

Architecture:
    ConnSpace               finite metric space of connection values with a
                            distinguished null element
    ConnectionField         sparse map (site j, offset k) -> element, null
                            bonds absent; .edges() gives COO arrays
    GibbsModel              potentials + base-measure parameters

    null_prob               base probability that bond (j, k) is non-null
    sample_base_field       independent draw from the base measure mu0
    gibbs_conditional_energy
    metropolis_sample       single-site independence sampler, systematic sweep
    enumerate_exact         exact law of the truncated Gibbs measure
    sweep_kernel_apply      one exact sweep of the sampler on a law
    phi_tail_epsilon        sup-norm tail sum of potentials beyond range p

Only bonds with offset in V_m (the "active" bonds) carry energy under the
truncation zeta(m). The remaining bonds are distributed exactly as under mu0
and are drawn independently of the chain.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, StateSpaceTooLarge
from lattice_engine import (
    TorusSpec, add_mod, cube_offsets, cube_volume, flat_sites, radii_of, site_coords, site_index,
    sup_norm,
)

log = logging.getLogger("SparseLattice.Connectivity")

MAX_ENUMERABLE_STATES = 2 ** 20
EXP_OVERFLOW = 700.0
# spawn-key tag separating connection streams from per-site noise streams
CONN_STREAM = 2 ** 32


# ══════════════════════════════════════════════════════════════════════════════
# 1. CONNECTION SPACE
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class ConnSpace:
    elements: list
    null_index: int
    metric: np.ndarray
    weights: list | None = None  # relative base weights of the non-null elements

    def __post_init__(self):
        self.metric = np.asarray(self.metric, dtype=float)
        k = len(self.elements)
        if self.metric.shape != (k, k):
            raise ConfigError(f"metric shape {self.metric.shape} does not match {k} elements")
        if not np.allclose(self.metric, self.metric.T) or np.any(np.diag(self.metric) != 0):
            raise ConfigError("connection metric must be symmetric with zero diagonal")
        if np.any(self.metric < 0):
            raise ConfigError("connection metric must be non-negative")
        for a, b, c in itertools.product(range(k), repeat=3):
            if self.metric[a, c] > self.metric[a, b] + self.metric[b, c] + 1e-12:
                raise ConfigError(f"triangle inequality fails on ({a},{b},{c})")
        if self.weights is not None and len(self.weights) != k - 1:
            raise ConfigError("weights must list one entry per non-null element")

    @classmethod
    def binary(cls, j_bar: float) -> "ConnSpace":
        """{null, connected} with d(null, connected) = J-bar."""
        return cls(elements=[0, 1], null_index=0,
                   metric=np.array([[0.0, j_bar], [j_bar, 0.0]]))

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def norms(self) -> np.ndarray:
        """||x|| = d(null, x) per element index."""
        return self.metric[self.null_index]

    @property
    def C_J(self) -> float:
        return float(self.norms.max())

    def non_null(self) -> list:
        return [i for i in range(self.size) if i != self.null_index]

    def non_null_probs(self) -> np.ndarray:
        w = np.ones(self.size - 1) if self.weights is None else np.asarray(self.weights, float)
        return w / w.sum()


# ══════════════════════════════════════════════════════════════════════════════
# 2. CONNECTION FIELD
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class ConnectionField:
    """
    Sparse map (site idx, offset idx) -> element index over V_n x V_n.

    Missing keys are the null element, so memory follows the number of
    non-null bonds rather than |V_n|^2.
    """
    spec: TorusSpec
    space: ConnSpace
    bonds: dict = field(default_factory=dict)

    def __post_init__(self):
        vol = self.spec.volume()
        clean = {}
        for (s, c), e in self.bonds.items():
            s, c, e = int(s), int(c), int(e)
            if not (0 <= s < vol and 0 <= c < vol):
                raise ConfigError(f"bond ({s}, {c}) outside a torus of {vol} sites")
            if not 0 <= e < self.space.size:
                raise ConfigError(f"element {e} outside a space of {self.space.size}")
            if e != self.space.null_index:
                clean[(s, c)] = e
        self.bonds = clean

    @classmethod
    def empty(cls, spec: TorusSpec, space: ConnSpace) -> "ConnectionField":
        return cls(spec, space)

    @classmethod
    def from_entries(cls, spec: TorusSpec, space: ConnSpace, entries: dict) -> "ConnectionField":
        """entries: {(j, k): element index}; offsets outside V_n are dropped."""
        bonds = {(site_index(j, spec), site_index(k, spec)): value
                 for (j, k), value in entries.items() if sup_norm(k) <= spec.n}
        return cls(spec, space, bonds)

    @classmethod
    def from_edges(cls, spec: TorusSpec, space: ConnSpace, src, off, elem) -> "ConnectionField":
        return cls(spec, space, dict(zip(zip(np.asarray(src).tolist(), np.asarray(off).tolist()),
                                         np.asarray(elem).tolist())))

    @classmethod
    def from_table(cls, spec: TorusSpec, space: ConnSpace, table) -> "ConnectionField":
        table = np.asarray(table, dtype=np.int64)
        vol = spec.volume()
        if table.shape != (vol, vol):
            raise ConfigError(f"field table must be {(vol, vol)}, got {table.shape}")
        src, off = np.nonzero(table != space.null_index)
        return cls.from_edges(spec, space, src, off, table[src, off])

    def __len__(self) -> int:
        return len(self.bonds)

    def get(self, site: int, off: int) -> int:
        return self.bonds.get((site, off), self.space.null_index)

    def set(self, site: int, off: int, element: int):
        if element == self.space.null_index:
            self.bonds.pop((site, off), None)
        else:
            self.bonds[(site, off)] = int(element)

    @property
    def offsets(self) -> list:
        return cube_offsets(self.spec.d, self.spec.n)

    @property
    def offset_radii(self) -> np.ndarray:
        return radii_of(self.spec)

    def entries(self) -> dict:
        offs = self.offsets  # V_n in cube order for both axes
        return {(offs[s], offs[c]): e for (s, c), e in sorted(self.bonds.items())}

    def edges(self):
        """(src, offset_idx, dst, element) arrays of non-null bonds, sorted by (src, offset)."""
        if not self.bonds:
            z = np.zeros(0, dtype=np.int64)
            return z, z.copy(), z.copy(), z.copy()
        keys = sorted(self.bonds)
        src = np.array([s for s, _ in keys], dtype=np.int64)
        off = np.array([c for _, c in keys], dtype=np.int64)
        elem = np.array([self.bonds[k] for k in keys], dtype=np.int64)
        dst = flat_sites(site_coords(src, self.spec) + site_coords(off, self.spec), self.spec)
        return src, off, dst, elem

    def table(self) -> np.ndarray:
        """Dense (|V_n|, |V_n|) element table; only sensible on small tori."""
        vol = self.spec.volume()
        out = np.full((vol, vol), self.space.null_index, dtype=np.int64)
        src, off, _, elem = self.edges()
        out[src, off] = elem
        return out

    def site_norm_sums(self, offset_mask) -> np.ndarray:
        """Per site: sum of ||omega^{j,k}|| over bonds whose offset index is in the mask."""
        src, off, _, elem = self.edges()
        w = self.space.norms[elem] * np.asarray(offset_mask, dtype=bool)[off]
        return np.bincount(src, weights=w, minlength=self.spec.volume()).astype(float)

    def squared_distance_by_site(self, other: "ConnectionField", offset_mask) -> np.ndarray:
        """Per site: sum of d(omega^{j,k}, beta^{j,k})^2 over masked offsets."""
        out = np.zeros(self.spec.volume())
        mask = np.asarray(offset_mask, dtype=bool)
        for s, c in set(self.bonds) | set(other.bonds):
            if mask[c]:
                out[s] += self.space.metric[self.get(s, c), other.get(s, c)] ** 2
        return out

    def shifted(self, k) -> "ConnectionField":
        """Field seen from the shifted origin: row j becomes row j+k."""
        src, off, _, elem = self.edges()
        moved = flat_sites(site_coords(src, self.spec) - np.asarray(k, dtype=np.int64), self.spec)
        return ConnectionField.from_edges(self.spec, self.space, moved, off, elem)

    def truncated(self, m: int) -> "ConnectionField":
        """zeta(m): bonds with ||k|| > m set to null."""
        radii = self.offset_radii
        return ConnectionField(self.spec, self.space,
                               {b: e for b, e in self.bonds.items() if radii[b[1]] <= m})

    def copy(self) -> "ConnectionField":
        return ConnectionField(self.spec, self.space, dict(self.bonds))


# ══════════════════════════════════════════════════════════════════════════════
# 3. GIBBS MODEL
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class Potential:
    shape: tuple  # ((j, k), ...) relative to the origin
    table: dict   # {assignment tuple of element indices: energy}; missing -> 0

    def __post_init__(self):
        self.shape = tuple((tuple(j), tuple(k)) for j, k in self.shape)
        self.table = {tuple(a): float(v) for a, v in self.table.items()}
        for a in self.table:
            if len(a) != len(self.shape):
                raise ConfigError(f"assignment {a} does not match shape of size {len(self.shape)}")

    @property
    def range(self) -> int:
        return max(max(sup_norm(j), sup_norm(k)) for j, k in self.shape)

    @property
    def sup(self) -> float:
        return max((abs(v) for v in self.table.values()), default=0.0)


@dataclass
class GibbsModel:
    potentials: list = field(default_factory=list)
    upsilon: float = 1.0
    gamma: float = 1.5
    m0: int = 1
    p_near: float = 0.5

    def __post_init__(self):
        if self.upsilon <= 0:
            raise ConfigError("upsilon must be positive")
        if self.gamma <= 1:
            raise ConfigError("gamma must exceed 1")
        if self.m0 < 1:
            raise ConfigError("m0 must be at least 1")
        if not 0.0 <= self.p_near <= 1.0:
            raise ConfigError("p_near must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "GibbsModel":
        pots = []
        for p in doc.get("potentials", []):
            table = {tuple(row["assign"]): row["energy"] for row in p.get("table", [])}
            pots.append(Potential(shape=[(tuple(j), tuple(k)) for j, k in p["shape"]], table=table))
        return cls(
            potentials=pots,
            upsilon=float(doc.get("upsilon", 1.0)),
            gamma=float(doc.get("gamma", 1.5)),
            m0=int(doc.get("m0", 1)),
            p_near=float(doc.get("p_near", 0.5)),
        )


def null_prob(k, model: GibbsModel) -> float:
    """Probability that a bond at offset k is non-null under mu0."""
    r = sup_norm(k)
    if r < model.m0:
        return model.p_near
    inner = float(cube_volume(len(k), r)) ** model.gamma
    if inner > EXP_OVERFLOW:
        return 0.0
    return math.exp(-model.upsilon * math.exp(inner))


def expected_row_degree(spec: TorusSpec, model: GibbsModel) -> float:
    return sum(null_prob(k, model) for k in cube_offsets(spec.d, spec.n))


def _rng(seed, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _base_tables(spec: TorusSpec, space: ConnSpace, model: GibbsModel):
    """Per offset: connect probability; per non-null element: cumulative split."""
    p = np.array([null_prob(k, model) for k in cube_offsets(spec.d, spec.n)])
    return p, np.cumsum(space.non_null_probs())


def sample_base_field(spec: TorusSpec, model: GibbsModel, seed, space: ConnSpace | None = None,
                      replica: int = 0) -> ConnectionField:
    """
    Independent draw from mu0. Per offset k the number of non-null rows is
    Binomial(|V_n|, p_k) and the rows themselves a uniform subset, which is
    the same law as |V_n| independent Bernoulli(p_k) bonds.
    """
    space = space or ConnSpace.binary(1.0)
    rng = _rng(seed, CONN_STREAM, replica)
    vol = spec.volume()
    p, _ = _base_tables(spec, space, model)
    nn = np.array(space.non_null())
    split = space.non_null_probs()
    bonds = {}
    for c in np.nonzero(p > 0)[0]:
        hits = int(rng.binomial(vol, p[c]))
        if hits == 0:
            continue
        rows = rng.choice(vol, size=hits, replace=False)
        elems = rng.choice(nn, size=hits, p=split)
        bonds.update({(int(r), int(c)): int(e) for r, e in zip(rows, elems)})
    return ConnectionField(spec, space, bonds)


# ══════════════════════════════════════════════════════════════════════════════
# 4. ENERGY
# ══════════════════════════════════════════════════════════════════════════════

def _translates(spec: TorusSpec, model: GibbsModel):
    """Every (potential, bond list) with bonds as (site idx, offset idx) or None if off-torus."""
    out = []
    for pot in model.potentials:
        for l in cube_offsets(spec.d, spec.n):
            bonds = []
            for j, k in pot.shape:
                if sup_norm(k) > spec.n:
                    bonds.append((None, k))
                else:
                    bonds.append((site_index(add_mod(j, l, spec), spec), site_index(k, spec)))
            out.append((pot, tuple(bonds), tuple(sup_norm(k) for _, k in pot.shape)))
    return out


def _term_energy(pot: Potential, bonds, ranges, field: ConnectionField, m: int, null: int) -> float:
    assign = tuple(
        null if (b[0] is None or r > m) else field.get(b[0], b[1])
        for b, r in zip(bonds, ranges)
    )
    return pot.table.get(assign, 0.0)


def gibbs_conditional_energy(field: ConnectionField, B, model: GibbsModel, m: int) -> float:
    """
    Sum of Phi over translated shapes meeting B, evaluated on zeta(m)(field).

    B is an iterable of (j, k) bonds given as lattice vectors.
    """
    spec = field.spec
    target = {(site_index(j, spec), site_index(k, spec)) for j, k in B if sup_norm(k) <= spec.n}
    null = field.space.null_index
    total = 0.0
    for pot, bonds, ranges in _translates(spec, model):
        if any(b in target for b in bonds):
            total += _term_energy(pot, bonds, ranges, field, m, null)
    return total


def total_energy(field: ConnectionField, model: GibbsModel, m: int) -> float:
    null = field.space.null_index
    return sum(_term_energy(p, b, r, field, m, null) for p, b, r in _translates(field.spec, model))


def active_bonds(spec: TorusSpec, m: int) -> list:
    """Bonds (site idx, offset idx) whose offset lies in V_m, site-major."""
    offs = cube_offsets(spec.d, spec.n)
    cols = [c for c, k in enumerate(offs) if sup_norm(k) <= m]
    return [(r, c) for r in range(spec.volume()) for c in cols]


# ══════════════════════════════════════════════════════════════════════════════
# 5. METROPOLIS SAMPLER
# ══════════════════════════════════════════════════════════════════════════════

def metropolis_sample(spec: TorusSpec, model: GibbsModel, m: int, sweeps: int, seed,
                      space: ConnSpace | None = None, replica: int = 0,
                      trace: list | None = None) -> ConnectionField:
    """
    Systematic-sweep chain targeting exp(-H) d mu0 on the active bonds.

    Each visit proposes a fresh value from mu0 at that bond and accepts with
    min(1, exp(-dH)). If ``trace`` is a list, the active-bond states after
    every sweep are appended to it.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be at least 1")
    space = space or ConnSpace.binary(1.0)
    field = sample_base_field(spec, model, seed, space, replica)
    rng = _rng(seed, CONN_STREAM, replica, 1)
    bonds = active_bonds(spec, m)
    null = space.null_index

    touching = {b: [] for b in bonds}
    for pot, tb, ranges in _translates(spec, model):
        for b in set(tb):
            if b in touching:
                touching[b].append((pot, tb, ranges))

    p, cum = _base_tables(spec, space, model)
    nn = np.array(space.non_null())
    accepted = 0
    for _ in range(sweeps):
        u_connect = rng.random(len(bonds))
        u_pick = rng.random(len(bonds))
        u_accept = rng.random(len(bonds))
        for i, (r, c) in enumerate(bonds):
            if u_connect[i] < p[c]:
                proposal = int(nn[min(np.searchsorted(cum, u_pick[i], side="right"), len(nn) - 1)])
            else:
                proposal = null
            current = field.get(r, c)
            if proposal == current:
                accepted += 1
                continue
            terms = touching[(r, c)]
            before = sum(_term_energy(pt, tb, rg, field, m, null) for pt, tb, rg in terms)
            field.set(r, c, proposal)
            after = sum(_term_energy(pt, tb, rg, field, m, null) for pt, tb, rg in terms)
            dH = after - before
            if dH <= 0 or u_accept[i] < math.exp(-dH):
                accepted += 1
            else:
                field.set(r, c, current)
        if trace is not None:
            trace.append(np.array([field.get(r, c) for r, c in bonds]))
    log.debug("metropolis: %d sweeps over %d bonds, acceptance %.3f",
              sweeps, len(bonds), accepted / max(1, sweeps * len(bonds)))
    return field


# ══════════════════════════════════════════════════════════════════════════════
# 6. EXACT ENUMERATION
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class ExactDistribution:
    spec: TorusSpec
    m: int
    bonds: list           # active bonds (site idx, offset idx)
    states: np.ndarray    # (S, B) element indices; row code = mixed radix, last bond fastest
    probs: np.ndarray     # (S,)
    base_probs: np.ndarray  # (S,) mu0 law of the active bonds
    energies: np.ndarray  # (S,)
    log_Z: float          # log sum_s mu0(s) exp(-H(s))

    def marginals(self, element: int) -> np.ndarray:
        """P(bond b == element) per active bond."""
        return (self.probs[:, None] * (self.states == element)).sum(axis=0)


def _bond_base_law(spec: TorusSpec, space: ConnSpace, model: GibbsModel, bonds) -> np.ndarray:
    offs = cube_offsets(spec.d, spec.n)
    law = np.zeros((len(bonds), space.size))
    split = space.non_null_probs()
    for i, (_, c) in enumerate(bonds):
        p = null_prob(offs[c], model)
        law[i, space.null_index] = 1.0 - p
        law[i, space.non_null()] = p * split
    return law


def enumerate_exact(spec: TorusSpec, model: GibbsModel, m: int,
                    space: ConnSpace | None = None) -> ExactDistribution:
    space = space or ConnSpace.binary(1.0)
    bonds = active_bonds(spec, m)
    size = space.size ** len(bonds)
    if size > MAX_ENUMERABLE_STATES:
        raise StateSpaceTooLarge(f"{space.size}^{len(bonds)} = {size} states exceed {MAX_ENUMERABLE_STATES}")

    states = np.array(list(itertools.product(range(space.size), repeat=len(bonds))),
                      dtype=np.int64).reshape(size, len(bonds))
    law = _bond_base_law(spec, space, model, bonds)
    base = np.prod(law[np.arange(len(bonds))[None, :], states], axis=1) if bonds else np.ones(1)

    col = {b: i for i, b in enumerate(bonds)}
    null = space.null_index
    energies = np.zeros(size)
    for pot, tb, ranges in _translates(spec, model):
        cols = []
        for b, r in zip(tb, ranges):
            cols.append(states[:, col[b]] if (b in col and r <= m) else np.full(size, null))
        assign = np.stack(cols, axis=1) if cols else np.zeros((size, 0), dtype=np.int64)
        for key, value in pot.table.items():
            energies += value * np.all(assign == np.array(key)[None, :], axis=1)

    # exp(-H) relative to mu0, shifted for stability
    shift = energies.min()
    weights = base * np.exp(-(energies - shift))
    Z = weights.sum()
    probs = weights / Z
    log_Z = float(np.log(Z) - shift)
    return ExactDistribution(spec, m, bonds, states, probs, base, energies, log_Z)


def sweep_kernel_apply(exact: ExactDistribution, model: GibbsModel, dist: np.ndarray,
                       space: ConnSpace | None = None) -> np.ndarray:
    """Push a law over the enumerated states through one systematic sweep."""
    space = space or ConnSpace.binary(1.0)
    law = _bond_base_law(exact.spec, space, model, exact.bonds)
    K = space.size
    B = len(exact.bonds)
    codes = np.arange(len(dist))
    E = exact.energies
    out = np.asarray(dist, dtype=float).copy()
    for i in range(B):
        radix = K ** (B - 1 - i)
        cur = exact.states[:, i]
        nxt = np.zeros_like(out)
        stay = out.copy()
        for e in range(K):
            target = codes + (e - cur) * radix
            moving = e != cur
            accept = np.minimum(1.0, np.exp(np.minimum(E - E[target], EXP_OVERFLOW)))
            flow = np.where(moving, out * law[i, e] * accept, 0.0)
            np.add.at(nxt, target, flow)
            stay -= flow
        out = nxt + stay
    return out


# ══════════════════════════════════════════════════════════════════════════════
# 7. POTENTIAL TAIL
# ══════════════════════════════════════════════════════════════════════════════

def phi_tail_epsilon(model: GibbsModel, p: int) -> float:
    """Sum of sup|Phi_A| over shapes not contained in the cube of radius p."""
    return float(sum(pot.sup for pot in model.potentials if pot.range > p))
