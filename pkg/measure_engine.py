"""
measure_engine.py — Empirical Measures & Lévy–Prokhorov Distances
==================================================================
An empirical measure on the torus puts mass 1/|V_n| on each of the |V_n|
shifts of one periodic configuration. Atoms are never materialised as a
list; marginals over a window V_q are gathered on demand.

Architecture:
    empirical_measure / double_layer_measure   build measures from runs
    project_marginal                           window V_q, periodic in sites,
                                               offsets beyond V_n are null
    atom_distances                             sum of sup-norms (+ root sum of
                                               squared connection distances)
    lp_distance_finite                         exact LP distance via max-flow
    dP_truncated                               2^-j weighted series of LP
                                               distances over nested windows
    ac_membership / ac_exit_bound              tail-moment tests
    path_average_Hn                            network average of a window
                                               functional
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
from dataclasses import dataclass
from typing import Callable

import networkx as nx
import numpy as np

from connectivity_engine import ConnSpace, ConnectionField
from lattice_engine import (
    TorusSpec, add_mod, cube_offsets, cube_volume, site_index, sup_norm,
)
from solver_engine import NetworkState, NoiseField

log = logging.getLogger("SparseLattice.Measure")

FLOW_TOL = 1e-12


# ══════════════════════════════════════════════════════════════════════════════
# 1. MEASURES
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class EmpiricalMeasure:
    spec: TorusSpec
    paths: np.ndarray                      # (|V_n|, steps+1) configuration before shifting
    field: ConnectionField | None = None   # connection layer of a double-layer measure

    @property
    def size(self) -> int:
        return self.spec.volume()

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    @property
    def is_double_layer(self) -> bool:
        return self.field is not None

    @property
    def space(self) -> ConnSpace | None:
        return self.field.space if self.field is not None else None

    def save(self, path: str):
        empty = np.zeros(0, dtype=np.int64)
        src, off, _, elem = self.field.edges() if self.field is not None else (empty,) * 4
        np.savez(path, d=self.spec.d, n=self.spec.n, paths=self.paths,
                 layered=self.field is not None, src=src, off=off, elem=elem,
                 metric=self.space.metric if self.space is not None else np.zeros((0, 0)),
                 null_index=self.space.null_index if self.space is not None else 0)

    @classmethod
    def load(cls, path: str) -> "EmpiricalMeasure":
        with np.load(path) as z:
            spec = TorusSpec(int(z["d"]), int(z["n"]))
            field = None
            if bool(z["layered"]):
                k = z["metric"].shape[0]
                space = ConnSpace(list(range(k)), int(z["null_index"]), z["metric"])
                field = ConnectionField.from_edges(spec, space, z["src"], z["off"], z["elem"])
            return cls(spec, z["paths"].copy(), field)


def empirical_measure(state: NetworkState) -> EmpiricalMeasure:
    return EmpiricalMeasure(state.spec, state.U)


def double_layer_measure(noise: NoiseField, field: ConnectionField) -> EmpiricalMeasure:
    return EmpiricalMeasure(noise.spec, noise.W, field.copy())


@dataclass
class Marginal:
    """Atoms restricted to a window: paths (atoms, |V_q|, steps+1), conn (atoms, |V_q|, |V_q|)."""
    q: int
    weights: np.ndarray
    paths: np.ndarray
    conn: np.ndarray | None = None
    space: ConnSpace | None = None


def project_marginal(mu: EmpiricalMeasure, q: int) -> Marginal:
    spec = mu.spec
    window = cube_offsets(spec.d, q)
    # site (j + l) mod V_n for every atom j and window site l
    sites = np.array([[site_index(add_mod(j, l, spec), spec) for l in window]
                      for j in cube_offsets(spec.d, spec.n)], dtype=np.int64)
    paths = mu.paths[sites]
    conn = None
    if mu.field is not None:
        # window position of each offset column of V_n; offsets beyond V_n stay null
        position = np.full(spec.volume(), -1, dtype=np.int64)
        for p, k in enumerate(window):
            if sup_norm(k) <= spec.n:
                position[site_index(k, spec)] = p
        table = np.full((spec.volume(), len(window)), mu.space.null_index, dtype=np.int64)
        src, off, _, elem = mu.field.edges()
        hit = position[off] >= 0
        table[src[hit], position[off[hit]]] = elem[hit]
        conn = table[sites]
    return Marginal(q, mu.weights, paths, conn, mu.space)



def atom_distances(a: Marginal, b: Marginal) -> np.ndarray:
    """Pairwise atom metric between two marginals on the same window."""
    diff = np.abs(a.paths[:, None] - b.paths[None, :])       # (Na, Nb, sites, time)
    D = diff.max(axis=-1).sum(axis=-1)
    if a.conn is not None and b.conn is not None:
        dc = a.space.metric[a.conn[:, None], b.conn[None, :]]  # (Na, Nb, sites, offsets)
        D = D + np.sqrt((dc ** 2).sum(axis=(-1, -2)))
    return D


# ══════════════════════════════════════════════════════════════════════════════
# 2. LEVY–PROKHOROV
# ══════════════════════════════════════════════════════════════════════════════

def _flow_within(wa: np.ndarray, wb: np.ndarray, D: np.ndarray, t: float) -> float:
    """Largest transport of wa onto wb using only pairs with D <= t."""
    g = nx.DiGraph()
    for i, x in enumerate(wa):
        if x > 0:
            g.add_edge("s", ("a", i), capacity=float(x))
    for j, y in enumerate(wb):
        if y > 0:
            g.add_edge(("b", j), "t", capacity=float(y))
    rows, cols = np.nonzero(D <= t)
    for i, j in zip(rows, cols):
        if wa[i] > 0 and wb[j] > 0:
            g.add_edge(("a", int(i)), ("b", int(j)), capacity=float(min(wa[i], wb[j])))
    if "s" not in g or "t" not in g:
        return 0.0
    return float(nx.maximum_flow_value(g, "s", "t"))


def lp_distance_finite(wa, wb, D) -> float:
    """
    Exact LP distance between sum_i wa_i delta_{x_i} and sum_j wb_j delta_{y_j}
    with D[i, j] = d(x_i, y_j).

    With F(t) the max-flow through pairs at distance <= t, the distance is
    min over t in {0} u {D} of max(t, 1 - F(t)), capped at 1. 1 - F is
    non-increasing, so the minimum sits where t first overtakes it.
    """
    wa = np.asarray(wa, dtype=float)
    wb = np.asarray(wb, dtype=float)
    D = np.asarray(D, dtype=float)
    cands = sorted({0.0, *D.ravel().tolist()})
    cands = [t for t in cands if t < 1.0] + [1.0]

    gap = {}

    def deficit(i: int) -> float:
        if i not in gap:
            short = 1.0 - _flow_within(wa, wb, D, cands[i])
            gap[i] = short if short > FLOW_TOL else 0.0
        return gap[i]

    # first index with t >= 1 - F(t)
    lo, hi = 0, len(cands) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cands[mid] >= deficit(mid):
            hi = mid
        else:
            lo = mid + 1
    best = cands[lo]
    if lo > 0:
        best = min(best, deficit(lo - 1))
    return float(min(best, 1.0))


def lp_distance_measures(a: Marginal, b: Marginal) -> float:
    return lp_distance_finite(a.weights, b.weights, atom_distances(a, b))


def dP_truncated(muA: EmpiricalMeasure, muB: EmpiricalMeasure, j_max: int,
                 max_workers: int = 4) -> dict:
    """sum_{j=1}^{j_max} min(2^-j, d_j(marginals)); the 2^-j_max remainder is reported."""
    def term(j: int) -> float:
        return lp_distance_measures(project_marginal(muA, j), project_marginal(muB, j))

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        dists = list(pool.map(term, range(1, j_max + 1)))
    terms = [min(2.0 ** -j, dj) for j, dj in enumerate(dists, start=1)]
    return {
        "value": float(sum(terms)),
        "terms": terms,
        "marginal_distances": dists,
        "remainder_bound": 2.0 ** -j_max,
        "j_max": j_max,
    }


# ══════════════════════════════════════════════════════════════════════════════
# 3. A_c MEMBERSHIP
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class AcThresholds:
    c: float
    rho: float
    C_J: float
    T: float
    m0: int = 1
    m_max: int = 3

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.rho <= 1:
            raise ValueError("rho must exceed 1")

    def second_moment_threshold(self, d: int, m: int) -> float:
        vol = cube_volume(d, m)
        return math.exp(-(4 + 2 * self.rho) * self.T * self.C_J * vol) * vol ** (-2 * self.rho - 2)

    def first_moment_threshold(self, d: int, m: int) -> float:
        vol = cube_volume(d, m)
        return math.exp(-(3 + self.rho) * self.T * self.C_J * vol) * vol ** (-self.rho - 1)


def ac_membership(mu: EmpiricalMeasure, thr: AcThresholds) -> dict:
    if not mu.is_double_layer:
        raise ValueError("A_c membership needs a double-layer measure")
    spec = mu.spec
    e_noise = float(np.mean(np.max(np.abs(mu.paths), axis=1) ** 2))
    radii = mu.field.offset_radii

    rows = []
    c_needed = e_noise
    for m in range(thr.m0, thr.m_max + 1):
        tail = mu.field.site_norm_sums(radii > m)
        e2, e1 = float(np.mean(tail ** 2)), float(np.mean(tail))
        th2 = thr.second_moment_threshold(spec.d, m)
        th1 = thr.first_moment_threshold(spec.d, m)
        r2 = e2 / th2 if e2 > 0 else 0.0
        r1 = e1 / th1 if e1 > 0 else 0.0
        c_needed = max(c_needed, r2, r1)
        rows.append({"m": m, "tail_second_moment": e2, "tail_first_moment": e1,
                     "threshold_second": thr.c * th2, "threshold_first": thr.c * th1,
                     "ok": e2 <= thr.c * th2 and e1 <= thr.c * th1})
    return {
        "c": thr.c,
        "noise_second_moment": e_noise,
        "noise_ok": e_noise <= thr.c,
        "per_m": rows,
        "smallest_c": c_needed,
        "member": bool(e_noise <= thr.c and all(r["ok"] for r in rows)),
    }


def ac_exit_bound(a1: float, a2: float, c1: float, c2: float, c: float) -> float:
    """
    Exponential Chebyshev bound on |V_n|^-1 log P(double-layer measure leaves A_c),
    from the noise moment constants (c1, c2) and the connection moment
    constants (a1, a2).
    """
    return max(-c * a1 + a2, -c1 * c + c2)


# ══════════════════════════════════════════════════════════════════════════════
# 4. NETWORK AVERAGES
# ══════════════════════════════════════════════════════════════════════════════

def path_average_Hn(state: NetworkState, g: Callable[[np.ndarray], float], q: int = 0) -> float:
    """|V_n|^-1 sum_j g(window of S^j U over V_q)."""
    marg = project_marginal(empirical_measure(state), q)
    return float(np.mean([g(window) for window in marg.paths]))
