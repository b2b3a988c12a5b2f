"""
weights_engine.py — Summable Truncation Weights
================================================
Builds the positive weight sequence lambda_m^j on Z^d whose Fourier symbol is

    lambda~_m(theta) = scale / (rho*|V_m| - kappa~_m(theta)),
    kappa~_m(theta)  = prod_p sin((2m+1) theta_p / 2) / sin(theta_p / 2),

i.e. the inverse of a Dirichlet-kernel perturbation of a constant. Weights
are used to control the error of truncating the interaction sum to V_m.

Pipeline:
    dirichlet_kernel      — symbol of the indicator of V_m
    normalizer_h          — integral normaliser by periodic trapezoid,
                            certified against a refined grid
    compute_weights       — Fourier coefficients on a window ||j|| <= R,
                            tail mass recorded, never renormalised
    weight_certificates   — convolution inequality slack and the finite-m
                            lower bound |V_m| lambda^j >= (rho-1)/rho^2

Normalisation: the stored weights use scale = (rho-1)|V_m| so that
sum_j lambda^j = lambda~(0) = 1. The integral normaliser h (which would
instead pin lambda^0 to 1) is still computed, reported and checked against
h >= |V_m|(rho-1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from errors import QuadratureError
from lattice_engine import cube_offsets, cube_volume, sup_norm

log = logging.getLogger("SparseLattice.Weights")

SERIES_CUTOFF = 1e-8
H_RELATIVE_TOL = 1e-10
CERT_TOL = 1e-8


@dataclass
class WeightSequence:
    m: int
    rho: float
    d: int
    window_radius: int
    values: dict  # LatticeVec -> float
    tail_mass: float
    scale: float
    h: float
    grid_K: int
    grid_sum: float = 1.0
    array: np.ndarray = field(default=None, repr=False)  # shape (2R+1,)*d

    def get(self, j) -> float:
        """lambda^j, 0 outside the stored window."""
        return self.values.get(tuple(j), 0.0)

    def stored_sum(self) -> float:
        return float(self.array.sum())


# ══════════════════════════════════════════════════════════════════════════════
# 1. DIRICHLET KERNEL
# ══════════════════════════════════════════════════════════════════════════════

def _dirichlet_1d(theta: np.ndarray, m: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    a = 2 * m + 1
    out = np.empty_like(theta)
    small = np.abs(theta) < SERIES_CUTOFF
    big = ~small
    out[big] = np.sin(a * theta[big] / 2.0) / np.sin(theta[big] / 2.0)
    # removable singularity: a * (1 - (a^2 - 1) theta^2 / 24)
    out[small] = a * (1.0 - (a * a - 1) * theta[small] ** 2 / 24.0)
    return out


def dirichlet_kernel(theta, m: int) -> float:
    """kappa~_m(theta) = sum_{k in V_m} exp(-i<theta,k>) for a single point."""
    if m < 0:
        raise ValueError("m must be non-negative")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return float(np.prod(_dirichlet_1d(theta, m)))


def _kappa_grid(m: int, d: int, N: int) -> np.ndarray:
    """Symbol on the periodic N-point grid per axis, in FFT ordering."""
    theta = 2.0 * np.pi * np.fft.fftfreq(N)
    line = _dirichlet_1d(theta, m)
    grid = line
    for _ in range(d - 1):
        grid = np.multiply.outer(grid, line)
    return grid


def _grid_points(m: int, grid: int | None) -> int:
    """K >= 64(2m+1); N = 2K+1."""
    K = max(int(grid or 0), 64 * (2 * m + 1))
    return K


# ══════════════════════════════════════════════════════════════════════════════
# 2. NORMALISER
# ══════════════════════════════════════════════════════════════════════════════

def _mean_inverse_symbol(m: int, rho: float, d: int, K: int) -> float:
    N = 2 * K + 1
    denom = rho * cube_volume(d, m) - _kappa_grid(m, d, N)
    return float(np.mean(1.0 / denom))


def normalizer_h(m: int, rho: float, d: int, grid: int | None = None) -> float:
    """
    h with (2pi)^-d * integral of h / (rho|V_m| - kappa~) = 1.

    Trapezoid on the torus is spectrally accurate for this smooth periodic
    integrand; the value is accepted only if doubling K moves it by less
    than 1e-10 relative.
    """
    if rho <= 1:
        raise ValueError(f"rho must exceed 1, got {rho}")
    K = _grid_points(m, grid)
    coarse = 1.0 / _mean_inverse_symbol(m, rho, d, K)
    fine = 1.0 / _mean_inverse_symbol(m, rho, d, 2 * K)
    rel = abs(fine - coarse) / abs(fine)
    if rel >= H_RELATIVE_TOL:
        raise QuadratureError(
            f"normaliser did not stabilise: K={K} -> {coarse!r}, 2K -> {fine!r} (rel {rel:.3e})"
        )
    log.debug("h(m=%d, rho=%g, d=%d) = %.15g (K=%d, rel change %.2e)", m, rho, d, fine, K, rel)
    return fine


# ══════════════════════════════════════════════════════════════════════════════
# 3. WEIGHTS
# ══════════════════════════════════════════════════════════════════════════════

def compute_weights(m: int, rho: float, d: int, window: int | None = None,
                    grid: int | None = None) -> WeightSequence:
    if rho <= 1:
        raise ValueError(f"rho must exceed 1, got {rho}")
    R = 4 * m if window is None else int(window)
    if R < m:
        raise ValueError(f"window radius {R} smaller than m={m}")

    h = normalizer_h(m, rho, d, grid)
    K = _grid_points(m, grid)
    N = 2 * K + 1
    vol = cube_volume(d, m)
    scale = (rho - 1.0) * vol

    symbol = scale / (rho * vol - _kappa_grid(m, d, N))
    # lambda^j = N^-d sum_l exp(+i theta_l . j) symbol_l  == ifftn
    coeffs = np.fft.ifftn(symbol).real
    grid_sum = float(coeffs.sum())

    idx = np.arange(-R, R + 1) % N
    window_arr = coeffs[np.ix_(*([idx] * d))].copy()

    offsets = cube_offsets(d, R)
    flat = window_arr.reshape(-1)
    values = {j: float(v) for j, v in zip(offsets, flat)}
    stored = float(window_arr.sum())
    tail = 1.0 - stored

    if np.any(window_arr <= 0):
        bad = [j for j, v in values.items() if v <= 0][:5]
        raise QuadratureError(f"non-positive weights in window at {bad}")

    log.info("weights m=%d rho=%g d=%d R=%d: lambda^0=%.6g tail=%.3e h=%.6g",
             m, rho, d, R, values[(0,) * d], tail, h)
    return WeightSequence(
        m=m, rho=rho, d=d, window_radius=R, values=values,
        tail_mass=max(tail, 0.0), scale=scale, h=h, grid_K=K,
        grid_sum=grid_sum, array=window_arr,
    )


def neighbourhood_sum(w: WeightSequence, j) -> float:
    """sum_{k in V_m} lambda^{j-k}."""
    return sum(w.get(tuple(a - b for a, b in zip(j, k))) for k in cube_offsets(w.d, w.m))


def shifted_mass_bound(w: WeightSequence, upsilon: dict) -> tuple:
    """
    (lhs, rhs) of sum_{j,k in V_m} lambda^j u^{j+k} <= rho|V_m| sum_j lambda^j u^j
    for a non-negative finitely supported u given as {LatticeVec: value}.
    """
    vol = cube_volume(w.d, w.m)
    V_m = cube_offsets(w.d, w.m)
    lhs = 0.0
    for j, lam in w.values.items():
        for k in V_m:
            lhs += lam * upsilon.get(tuple(a + b for a, b in zip(j, k)), 0.0)
    rhs = w.rho * vol * sum(w.get(j) * u for j, u in upsilon.items())
    return lhs, rhs


# ══════════════════════════════════════════════════════════════════════════════
# 4. CERTIFICATES
# ══════════════════════════════════════════════════════════════════════════════

def weight_certificates(w: WeightSequence, tol: float = CERT_TOL) -> dict:
    vol = cube_volume(w.d, w.m)
    conv_rows = []
    for j in cube_offsets(w.d, w.window_radius - w.m):
        slack = w.rho * vol * w.get(j) - neighbourhood_sum(w, j)
        conv_rows.append({"j": list(j), "slack": slack, "ok": slack >= -tol})

    threshold = (w.rho - 1.0) / w.rho ** 2
    lower_rows = []
    for j in cube_offsets(w.d, w.m):
        value = vol * w.get(j)
        lower_rows.append({"j": list(j), "value": value, "threshold": threshold,
                           "ok": value >= threshold - tol})

    h_floor = vol * (w.rho - 1.0)
    positivity = all(v > 0 for v in w.values.values())
    mass_ok = abs(w.grid_sum - 1.0) <= tol and w.tail_mass >= 0.0

    min_slack = min((r["slack"] for r in conv_rows), default=0.0)
    report = {
        "m": w.m, "rho": w.rho, "d": w.d, "window_radius": w.window_radius,
        "positivity": positivity,
        "sum_identity": {"grid_sum": w.grid_sum, "stored_sum": w.stored_sum(),
                         "tail_mass": w.tail_mass, "ok": mass_ok},
        "convolution": conv_rows,
        "min_convolution_slack": min_slack,
        "lower_bound": lower_rows,
        "lower_bound_threshold": threshold,
        "h": {"value": w.h, "floor": h_floor, "ok": w.h >= h_floor * (1 - tol)},
    }
    report["passed"] = bool(
        positivity and mass_ok and report["h"]["ok"]
        and all(r["ok"] for r in conv_rows)
    )
    report["lower_bound_passed"] = all(r["ok"] for r in lower_rows)
    if not report["passed"]:
        log.warning("weight certificate failed for m=%d rho=%g: min slack %.3e",
                    w.m, w.rho, min_slack)
    return report
