"""
harness_engine.py — Monte-Carlo Experiment Orchestration
=========================================================
Runs replica batches of the lattice network and turns them into tables.

Architecture:
    run_replicas(cfg)
        ├── [1] per replica: noise + connection field on their own streams
        ├── [2] integrate, then H_n observables, certificates, A_c check
        ├── [3] failures (blow-up, bad input) recorded, batch continues
        └── [4] deterministic fold in replica order -> RunManifest

    ldp_scan                 P(event) with Wilson intervals over an n-sweep
    mgf_noise_check          noise exponential moment per site
    connection_growth_check  connection-tail exponential moments per m
    relative_entropy_exact / gamma_m_estimate / rate_ingredients
    emit_results             CSV table + JSON manifest, byte-stable
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import logsumexp, rel_entr
from scipy.stats import norm

from config_service import ExperimentConfig, canonical_json
from connectivity_engine import (
    ConnectionField, GibbsModel, ConnSpace, enumerate_exact, metropolis_sample, null_prob,
    sample_base_field,
)
from errors import SparseLatticeError
from lattice_engine import TorusSpec, cube_offsets, cube_volume, sup_norm
from measure_engine import AcThresholds, ac_membership, double_layer_measure, path_average_Hn
from solver_engine import (
    NoiseField, apriori_bound_certificate, integrate_network, pair_bound_certificate,
    psi_m_truncated, sample_noise,
)
from weights_engine import compute_weights

log = logging.getLogger("SparseLattice.Harness")

REPLICA_TIMEOUT_SEC = 600

# Bounded window functionals g; each receives the (|V_q|, steps+1) window at q = 0.
OBSERVABLES = {
    "mean_terminal": lambda win: float(np.tanh(win[0, -1])),
    "mean_square_terminal": lambda win: float(np.tanh(win[0, -1]) ** 2),
    "mean_sup": lambda win: float(min(np.max(np.abs(win[0])), 10.0)),
    "mean_time_average": lambda win: float(np.tanh(np.mean(win[0]))),
}


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    n: int
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, "n": self.n,
                "config": self.config, "replicas": self.records}

    def ok_records(self) -> list:
        return [r for r in self.records if r.get("status") == "ok"]


# ══════════════════════════════════════════════════════════════════════════════
# 1. REPLICAS
# ══════════════════════════════════════════════════════════════════════════════

def sample_field(cfg: ExperimentConfig, spec: TorusSpec, replica: int) -> ConnectionField:
    if cfg.sweeps > 0:
        return metropolis_sample(spec, cfg.model, spec.n, cfg.sweeps, cfg.seed, cfg.space, replica)
    return sample_base_field(spec, cfg.model, cfg.seed, cfg.space, replica)


def _run_one(cfg: ExperimentConfig, spec: TorusSpec, replica: int, weights: dict) -> dict:
    noise = sample_noise(spec, cfg.dt, cfg.T, cfg.seed, replica, cfg.sigma)
    field = sample_field(cfg, spec, replica)
    state = integrate_network(noise, field, cfg.fhn, cfg.hebb)

    rec = {"replica": replica, "status": "ok", "error": "",
           "edges": int(len(state.edges[0]))}
    for name in cfg.observables:
        rec[f"H_{name}"] = path_average_Hn(state, OBSERVABLES[name], q=0)

    apriori = apriori_bound_certificate(state, noise, field, cfg.fhn)
    rec["apriori_max_ratio"] = apriori["max_ratio"]
    rec["apriori_passed"] = apriori["passed"]

    for m in cfg.pair_m:
        if m > spec.n:
            continue
        trunc = psi_m_truncated(noise, field, cfg.fhn, cfg.hebb, m)
        pair = pair_bound_certificate(trunc, state, noise, noise, field, field, weights[m], cfg.fhn)
        rec[f"pair_m{m}_relative_slack"] = pair["relative_slack"]
        rec[f"pair_m{m}_passed"] = pair["passed"]

    thr = AcThresholds(c=cfg.ac_c, rho=cfg.rho, C_J=cfg.space.C_J, T=cfg.T,
                       m0=cfg.model.m0, m_max=max(cfg.model.m0, cfg.ac_m_max))
    rec["ac_smallest_c"] = ac_membership(double_layer_measure(noise, field), thr)["smallest_c"]

    for ev in cfg.events:
        rec[f"event_{ev.name}"] = ev.holds(rec[f"H_{ev.observable}"])
    return rec


def safe_future(fut, replica: int, timeout: int = REPLICA_TIMEOUT_SEC) -> dict:
    """Resolve a replica future; any failure becomes a failed record."""
    try:
        return fut.result(timeout=timeout)
    except concurrent.futures.TimeoutError:
        log.warning("replica %d timed out after %ds", replica, timeout)
        return {"replica": replica, "status": "failed", "error": f"timeout after {timeout}s"}
    except SparseLatticeError as e:
        log.warning("replica %d failed: %s", replica, e)
        return {"replica": replica, "status": "failed", "error": str(e)}
    except Exception as e:
        log.error("replica %d crashed: %s", replica, e, exc_info=True)
        return {"replica": replica, "status": "failed", "error": f"{type(e).__name__}: {e}"}


def run_replicas(cfg: ExperimentConfig, n: int | None = None,
                 order: list | None = None) -> RunManifest:
    """
    Execute every replica of cfg at torus radius n (default: first of the sweep).

    ``order`` permutes submission order only; records are folded by replica
    index so the manifest does not depend on scheduling.
    """
    spec = cfg.spec(n)
    weights = {m: compute_weights(m, cfg.rho, spec.d) for m in cfg.pair_m if m <= spec.n}
    order = list(range(cfg.replicas)) if order is None else list(order)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        futures = {r: pool.submit(_run_one, cfg, spec, r, weights) for r in order}
        records = {r: safe_future(futures[r], r) for r in order}

    manifest = RunManifest(cfg.hash, cfg.seed, spec.n, [records[r] for r in sorted(records)],
                           cfg.raw)
    failed = len(manifest.records) - len(manifest.ok_records())
    log.info("n=%d: %d replicas done, %d failed", spec.n, len(manifest.records), failed)
    return manifest


# ══════════════════════════════════════════════════════════════════════════════
# 2. LARGE-DEVIATION SCAN
# ══════════════════════════════════════════════════════════════════════════════

def wilson_interval(hits: int, trials: int, confidence: float = 0.95) -> tuple:
    if trials <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2.0)
    p = hits / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def ldp_scan(cfg: ExperimentConfig, event: str, n_values: list | None = None,
             confidence: float = 0.95) -> pd.DataFrame:
    """Rows (n, |V_n|, P(E), -|V_n|^-1 log P(E)) with Wilson intervals."""
    if event not in {e.name for e in cfg.events}:
        raise SparseLatticeError(f"event {event!r} is not defined in the config")
    rows = []
    for n in (n_values or cfg.n_values):
        manifest = run_replicas(cfg, n)
        ok = manifest.ok_records()
        hits = sum(1 for r in ok if r.get(f"event_{event}"))
        trials = len(ok)
        vol = cube_volume(cfg.d, n)
        lo, hi = wilson_interval(hits, trials, confidence)
        p_hat = hits / trials if trials else 0.0
        zero_hit = hits == 0
        # a zero-hit row reports the rate implied by the interval's upper end
        neg_log = max(0.0, -math.log(hi if zero_hit else p_hat) / vol)
        rows.append({"n": n, "volume": vol, "trials": trials, "hits": hits, "p_hat": p_hat,
                     "ci_low": lo, "ci_high": hi, "neg_log_rate": neg_log,
                     "zero_hit": zero_hit})
        if zero_hit:
            log.warning("event %s never observed at n=%d; reporting Wilson upper bound", event, n)
    return pd.DataFrame(rows, columns=["n", "volume", "trials", "hits", "p_hat", "ci_low",
                                       "ci_high", "neg_log_rate", "zero_hit"])


# ══════════════════════════════════════════════════════════════════════════════
# 3. EXPONENTIAL MOMENT CHECKS
# ══════════════════════════════════════════════════════════════════════════════

def _log_mean_exp(x: np.ndarray) -> float:
    return float(logsumexp(x) - math.log(len(x)))


def mgf_noise_check(noises: list, c1: float, bootstrap: int = 200, seed: int = 0) -> dict:
    """|V_n|^-1 log E exp(c1 sum_j ||W^j||_T^2) with a bootstrap interval."""
    if not noises:
        raise ValueError("need at least one noise replica")
    vol = noises[0].spec.volume()
    T = noises[0].T
    S = np.array([np.sum(nf.sup_norms() ** 2) for nf in noises])
    x = c1 * S
    if c1 == 0:
        return {"c1": 0.0, "estimate": 0.0, "ci": (0.0, 0.0), "safe_zone": True, "finite": True}
    est = _log_mean_exp(x) / vol
    rng = np.random.Generator(np.random.Philox(seed))
    boots = [_log_mean_exp(rng.choice(x, size=len(x), replace=True)) / vol for _ in range(bootstrap)]
    finite = bool(np.isfinite(est))
    safe = c1 < 1.0 / (2.0 * T)
    if not finite or not safe:
        log.warning("noise moment at c1=%g beyond the safe zone (T=%g): estimate %r", c1, T, est)
    return {"c1": c1, "estimate": est if finite else math.inf,
            "ci": (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5))),
            "safe_zone": safe, "finite": finite}


def _growth_exponent(log_pref: float, X: np.ndarray) -> tuple:
    """exp(log_pref) * X elementwise; flags overflow where X > 0."""
    if not np.any(X > 0):
        return np.zeros_like(X, dtype=float), False
    if log_pref > 700:
        return np.where(X > 0, np.inf, 0.0), True
    return math.exp(log_pref) * X, False


def connection_growth_check(fields: list, m_values: list, a1: float, rho: float, T: float,
                            model: GibbsModel | None = None) -> list:
    """Per m, the two connection-tail exponential moments and the implied a2."""
    spec = fields[0].spec
    vol_n = spec.volume()
    C_J = fields[0].space.C_J
    radii = fields[0].offset_radii
    rows = []
    for m in m_values:
        vol = cube_volume(spec.d, m)
        tails = np.array([f.site_norm_sums(radii > m) for f in fields])
        X2 = (tails ** 2).sum(axis=1)
        X1 = tails.sum(axis=1)
        if a1 <= 0:
            e2 = e1 = np.zeros(len(fields))
            over2 = over1 = False
        else:
            e2, over2 = _growth_exponent(math.log(a1) + (2 * rho + 2) * math.log(vol)
                                         + (4 + 2 * rho) * T * C_J * vol, X2)
            e1, over1 = _growth_exponent(math.log(a1) + (rho + 1) * math.log(vol)
                                         + (3 + rho) * T * C_J * vol, X1)
        est2 = _log_mean_exp(e2) / vol_n
        est1 = _log_mean_exp(e1) / vol_n
        row = {"m": m, "second_moment": est2, "first_moment": est1,
               "implied_a2": max(est2, est1), "overflow": bool(over2 or over1)}
        if model is not None:
            # P(some bond at ||k|| > m is non-null) for one site
            q = np.prod([1.0 - null_prob(k, model) for k in cube_offsets(spec.d, spec.n)
                         if sup_norm(k) > m])
            row["analytic_tail_probability"] = float(1.0 - q)
            row["empirical_tail_frequency"] = float(np.mean(tails > 0))
        rows.append(row)
    return rows


# ══════════════════════════════════════════════════════════════════════════════
# 4. ENTROPY AND GIBBS RATE INGREDIENTS
# ══════════════════════════════════════════════════════════════════════════════

def relative_entropy_exact(p, q) -> float:
    """sum p log(p/q); inf when p charges a state q does not."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    return float(np.sum(rel_entr(p, q)))


def gamma_m_estimate(model: GibbsModel, m: int, spec: TorusSpec, mu=None,
                     space: ConnSpace | None = None) -> dict:
    """
    Gamma_m at an enumerable torus: the per-site energy share
    E^mu[sum_A |A|_*^-1 Phi_A] plus |V_n|^-1 log Z. mu defaults to Q_m.
    """
    exact = enumerate_exact(spec, model, m, space)
    probs = exact.probs if mu is None else np.asarray(mu, dtype=float)
    vol = spec.volume()
    energy = float(np.dot(probs, exact.energies)) / vol
    log_partition = exact.log_Z / vol
    return {"m": m, "n": spec.n, "energy_term": energy, "log_partition": log_partition,
            "gamma_m": energy + log_partition, "exact": exact}


def rate_ingredients(model: GibbsModel, m: int, spec: TorusSpec, mu=None,
                     space: ConnSpace | None = None) -> dict:
    """h(mu | mu0), Gamma_m and I_m = h + Gamma_m; I_m = 0 at mu = Q_m."""
    g = gamma_m_estimate(model, m, spec, mu, space)
    exact = g.pop("exact")
    probs = exact.probs if mu is None else np.asarray(mu, dtype=float)
    h = relative_entropy_exact(probs, exact.base_probs) / spec.volume()
    return {**g, "specific_relative_entropy": h, "rate": h + g["gamma_m"]}


# ══════════════════════════════════════════════════════════════════════════════
# 5. RESULT EMISSION
# ══════════════════════════════════════════════════════════════════════════════

def manifest_columns(cfg: ExperimentConfig, n: int) -> list:
    cols = ["replica", "status", "error", "edges"]
    cols += [f"H_{o}" for o in cfg.observables]
    cols += ["apriori_max_ratio", "apriori_passed"]
    for m in cfg.pair_m:
        if m <= n:
            cols += [f"pair_m{m}_relative_slack", f"pair_m{m}_passed"]
    cols += ["ac_smallest_c"]
    cols += [f"event_{e.name}" for e in cfg.events]
    return cols


def manifest_table(manifest: RunManifest, columns: list) -> pd.DataFrame:
    return pd.DataFrame(manifest.records, columns=columns)


def emit_results(manifest: RunManifest, cfg: ExperimentConfig, out_dir: str | None = None,
                 stem: str | None = None) -> dict:
    """Write <stem>.csv and <stem>.json; returns the paths written."""
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or f"run_{manifest.config_hash[:12]}_n{manifest.n}"
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    json_path = os.path.join(out_dir, f"{stem}.json")

    table = manifest_table(manifest, manifest_columns(cfg, manifest.n))
    table.to_csv(csv_path, index=False, lineterminator="\n", encoding="utf-8")

    doc = {**manifest.to_dict(), "config": cfg.raw}
    with open(json_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(json.loads(canonical_json(doc)), sort_keys=True, indent=2))
        f.write("\n")
    log.info("Wrote %s and %s", csv_path, json_path)
    return {"csv": csv_path, "json": json_path}


def emit_trajectories(state, path: str):
    """Long-format CSV (t, site, U, w) for one simulated network."""
    V, steps = state.U.shape
    t = np.tile(np.arange(steps) * state.dt, V)
    site = np.repeat(np.arange(V), steps)
    pd.DataFrame({"t": t, "site": site, "U": state.U.ravel(), "w": state.w_aux.ravel()}) \
        .to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path
