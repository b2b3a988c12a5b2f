"""
dynamics_engine.py — FitzHugh–Nagumo Drift, Hebbian Weights & Audits
=====================================================================
Per-particle dynamics of the lattice network:

    drift        b_t(U) = U_t - U_t^3/3 - w_t,
                 w_t    = c^-1 * int_0^t exp(-c(t-s)) (U_s + a) ds
    interaction  Lambda(x, U, X) = G * f(U_t) * f(X_t),   0 for the null x
    learning     dG/dt = J_corr (cap - G) v(U) v(X) - J_dec G

The recovery variable w and the weight G are linear given U, so both are
advanced by exact exponential updates over a step with U frozen.

assumption_audit() estimates the constants of the one-sided drift bounds and
of the interaction bounds on a corpus of sampled paths and lists every pair
that breaks them.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from errors import ConfigError

log = logging.getLogger("SparseLattice.Dynamics")


# ── Scalar maps ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ScalarMap:
    name: str
    fn: Callable
    sup: float
    lipschitz: float

    def __call__(self, x):
        return self.fn(x)

    def scaled(self, factor: float) -> "ScalarMap":
        fn = self.fn
        return ScalarMap(f"{factor:g}*{self.name}", lambda x: factor * fn(x),
                         abs(factor) * self.sup, abs(factor) * self.lipschitz)


def _constant(v: float) -> ScalarMap:
    return ScalarMap(f"constant:{v:g}", lambda x: np.full_like(np.asarray(x, float), v) + 0.0,
                     abs(v), 0.0)


SCALAR_MAPS = {
    "tanh": ScalarMap("tanh", np.tanh, 1.0, 1.0),
    "sigmoid": ScalarMap("sigmoid", lambda x: 1.0 / (1.0 + np.exp(-x)), 1.0, 0.25),
    "one": _constant(1.0),
    "zero": _constant(0.0),
}


def scalar_map(name: str) -> ScalarMap:
    """Registry lookup; 'constant:<v>' builds a constant map."""
    if name in SCALAR_MAPS:
        return SCALAR_MAPS[name]
    if name.startswith("constant:"):
        try:
            return _constant(float(name.split(":", 1)[1]))
        except ValueError as e:
            raise ConfigError(f"bad constant map {name!r}") from e
    raise ConfigError(f"unknown scalar map {name!r}; known: {sorted(SCALAR_MAPS)} or constant:<v>")


def normalized_gain(f: ScalarMap) -> ScalarMap:
    """Rescale f so that sup|f|^2 <= 1."""
    if f.sup <= 1.0:
        return f
    return f.scaled(1.0 / f.sup)


# ── Parameters ────────────────────────────────────────────────────────────────

@dataclass
class FhnParams:
    a: float = 0.7
    c: float = 1.25
    f: ScalarMap = SCALAR_MAPS["tanh"]
    v_act: ScalarMap = SCALAR_MAPS["sigmoid"]

    def __post_init__(self):
        if self.a < 0 or self.c <= 0:
            raise ConfigError("FHN parameter a must be non-negative and c positive")
        for m in (self.f, self.v_act):
            if not (math.isfinite(m.sup) and math.isfinite(m.lipschitz)):
                raise ConfigError(f"map {m.name} needs finite sup and Lipschitz bounds")

    @property
    def one_sided_constant(self) -> float:
        return 1.0 + 1.0 / self.c ** 2

    @property
    def drift_offset(self) -> float:
        """a / c^2, the sup of |w| on the zero path."""
        return self.a / self.c ** 2


@dataclass
class HebbParams:
    j_corr: float = 1.0
    j_dec: float = 0.5
    j_bar: float = 1.0
    g_ini: float = 0.5

    def __post_init__(self):
        if min(self.j_corr, self.j_dec, self.j_bar) < 0:
            raise ConfigError("Hebbian rates and J-bar must be non-negative")
        if not 0.0 <= self.g_ini <= self.j_bar:
            raise ConfigError(f"g_ini={self.g_ini} must lie in [0, j_bar={self.j_bar}]")

    def initial_weight(self, cap):
        """G_0 on an edge whose connection norm is cap."""
        if self.j_bar == 0:
            return np.zeros_like(np.asarray(cap, float))
        return self.g_ini * np.asarray(cap, float) / self.j_bar


@dataclass
class Trajectory:
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def T(self) -> float:
        return self.dt * (len(self.values) - 1)

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k >= len(self.values) or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the grid of step {self.dt}")
        return k

    def sup_upto(self, t: float) -> float:
        return float(np.max(np.abs(self.values[: self.index_of(t) + 1])))


# ══════════════════════════════════════════════════════════════════════════════
# 1. DRIFT
# ══════════════════════════════════════════════════════════════════════════════

def recovery_coefficients(params: FhnParams, dt: float) -> tuple:
    """(decay, gain) of w_{k+1} = decay * w_k + gain * (U_k + a)."""
    decay = math.exp(-params.c * dt)
    gain = -math.expm1(-params.c * dt) / params.c ** 2
    return decay, gain


def recovery_step(w, U, params: FhnParams, dt: float):
    decay, gain = recovery_coefficients(params, dt)
    return decay * w + gain * (U + params.a)


def recovery_path(U: np.ndarray, params: FhnParams, dt: float) -> np.ndarray:
    """w on the whole grid (w_0 = 0) along the last axis."""
    decay, gain = recovery_coefficients(params, dt)
    return lfilter([0.0, gain], [1.0, -decay], np.asarray(U, float) + params.a, axis=-1)


def drift_path(U: np.ndarray, params: FhnParams, dt: float) -> np.ndarray:
    U = np.asarray(U, float)
    return U - U ** 3 / 3.0 - recovery_path(U, params, dt)


def fhn_drift(U: Trajectory, params: FhnParams, t: float) -> float:
    """b_t(U) for a path known on the grid up to t."""
    k = U.index_of(t)
    return float(drift_path(U.values[: k + 1], params, U.dt)[-1])


# ══════════════════════════════════════════════════════════════════════════════
# 2. HEBBIAN LEARNING
# ══════════════════════════════════════════════════════════════════════════════

def hebbian_step(G, x, y, params: HebbParams, dt: float, v_act: ScalarMap | None = None,
                 cap=None):
    """
    Exact update of dG/dt = J_corr (cap - G) A - J_dec G with A = v(x) v(y)
    frozen over the step; cap defaults to J-bar. Works elementwise on arrays.
    """
    v_act = v_act or SCALAR_MAPS["sigmoid"]
    cap = params.j_bar if cap is None else cap
    A = v_act(x) * v_act(y)
    rate = params.j_corr * A + params.j_dec
    G = np.asarray(G, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        target = np.where(rate > 0, params.j_corr * cap * A / np.where(rate > 0, rate, 1.0), G)
    decay = np.exp(-rate * dt)
    out = target * (-np.expm1(-rate * dt)) + G * decay
    out = np.clip(out, 0.0, cap)
    return float(out) if out.ndim == 0 else out


# ══════════════════════════════════════════════════════════════════════════════
# 3. INTERACTION
# ══════════════════════════════════════════════════════════════════════════════

def interaction_lambda(conn: int, G, U_t, X_t, params: FhnParams, null_index: int = 0):
    """G f(U_t) f(X_t), or 0 when conn is the null connection."""
    if conn == null_index:
        return 0.0
    return G * params.f(U_t) * params.f(X_t)


# ══════════════════════════════════════════════════════════════════════════════
# 4. ASSUMPTION AUDIT
# ══════════════════════════════════════════════════════════════════════════════

def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    # a positive numerator over a zero norm cannot be bounded
    out[~pos & (num > 1e-15)] = np.inf
    return out


def assumption_audit(params: FhnParams, paths, dt: float, space=None,
                     weight_fraction: float = 1.0, tolerance: float = 1e-9) -> dict:
    """
    Estimate the drift and interaction constants over a corpus of paths.

    paths: sequence of 1-D arrays sampled on a common grid of step dt.
    space: connection space (ConnSpace) used for the interaction checks.
    weight_fraction: G / ||x|| for the interaction checks, in [0, 1].
    """
    paths = [np.asarray(p, dtype=float) for p in paths]
    if not paths:
        return {"n_paths": 0, "violations": [], "passed": True}

    P = np.stack(paths)
    B = drift_path(P, params, dt)
    S = np.maximum.accumulate(np.abs(P), axis=1)
    violations = []

    # strict absolute form: b(Z) <= C||Z|| where Z_t >= 0, b(Z) >= -C||Z|| where Z_t <= 0
    signed = np.where(P >= 0, B, -B)
    strict = _safe_ratio(np.maximum(signed, 0.0), S)
    C_strict = float(strict.max())
    for i in np.nonzero(~np.isfinite(strict).all(axis=1))[0]:
        violations.append({"kind": "strict_absolute_bound", "paths": [int(i)],
                           "detail": "drift non-zero on a zero-norm prefix"})

    affine = np.abs(B) / (1.0 + S)
    C_affine = float(affine.max())

    # one-sided Lipschitz over ordered pairs
    C_expected = params.one_sided_constant
    C_pair = 0.0
    for i, j in itertools.permutations(range(len(paths)), 2):
        diff = P[i] - P[j]
        dB = np.where(diff >= 0, B[i] - B[j], B[j] - B[i])
        ratio = _safe_ratio(np.maximum(dB, 0.0), np.maximum.accumulate(np.abs(diff)))
        r = float(ratio.max())
        C_pair = max(C_pair, r)
        if r > C_expected + tolerance:
            violations.append({"kind": "one_sided_lipschitz", "paths": [i, j], "ratio": r,
                               "bound": C_expected})

    report = {
        "n_paths": len(paths),
        "C_one_sided": C_pair,
        "C_expected": C_expected,
        "C_absolute_strict": C_strict,
        "C_affine": C_affine,
        "affine_offset": params.drift_offset,
    }

    if space is not None:
        report["interaction"] = _interaction_audit(params, P, S, space, weight_fraction,
                                                   tolerance, violations)

    report["violations"] = violations
    report["passed"] = not any(v["kind"] != "strict_absolute_bound" for v in violations)
    if violations:
        log.warning("assumption audit: %d violation(s) over %d paths", len(violations), len(paths))
    return report


def _interaction_audit(params, P, S, space, frac, tol, violations) -> dict:
    norms = space.norms
    fP = params.f(P)
    worst = {"lipschitz_second": 0.0, "lipschitz_first": 0.0, "connection": 0.0, "absolute": 0.0}
    pairs = list(itertools.permutations(range(len(P)), 2))

    for x in range(space.size):
        if x == space.null_index or norms[x] == 0:
            continue
        G = frac * norms[x]
        for i in range(len(P)):
            lam = G * fP[i] * fP[i]
            r = float(np.max(np.abs(lam) / (norms[x] * (1.0 + S[i]))))
            worst["absolute"] = max(worst["absolute"], r)
        for i, j in pairs:
            dX = np.maximum.accumulate(np.abs(P[i] - P[j]))
            # vary the second argument, first held at path i
            lhs = np.abs(G * fP[i] * (fP[i] - fP[j]))
            worst["lipschitz_second"] = max(worst["lipschitz_second"],
                                            float(_safe_ratio(lhs, norms[x] * dX).max()))
            lhs = np.abs(G * (fP[i] - fP[j]) * fP[j])
            worst["lipschitz_first"] = max(worst["lipschitz_first"],
                                           float(_safe_ratio(lhs, norms[x] * dX).max()))

    for x, y in itertools.permutations(range(space.size), 2):
        dxy = space.metric[x, y]
        gx = 0.0 if x == space.null_index else frac * norms[x]
        gy = 0.0 if y == space.null_index else frac * norms[y]
        for i, j in pairs:
            lhs = np.abs((gx - gy) * fP[i] * fP[j])
            worst["connection"] = max(worst["connection"],
                                      float(_safe_ratio(lhs, (S[i] + S[j]) * dxy).max()))

    for kind, r in worst.items():
        if r > 1.0 + tol:
            violations.append({"kind": f"interaction_{kind}", "paths": [], "ratio": r, "bound": 1.0})
    return {"C_J": space.C_J, **worst}
