"""
cli.py — Command Line Entry Point
==================================
    python cli.py simulate  --config configs/default.json
    python cli.py weights   --d 1 --m 3 --rho 2
    python cli.py gibbs     --config configs/gibbs_small.json --m 1 --sweeps 20000 --out field.csv
    python cli.py metric    --a a.npz --b b.npz --jmax 2
    python cli.py ldp-scan  --config configs/default.json --event high_terminal
    python cli.py audit     --config configs/default.json
    python cli.py ac-check  --run results/run_<hash12>_n1.json --c-grid 0.5,1,2
    python cli.py serve

Exit codes: 0 ok, 1 a certificate or audit failed, 2 bad input.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

import run_store
from config_service import LEDGER_PATH, from_dict, load_config, setup_logging
from connectivity_engine import enumerate_exact, metropolis_sample, sample_base_field
from dynamics_engine import assumption_audit
from errors import ConfigError, SparseLatticeError
from harness_engine import (
    connection_growth_check, emit_results, emit_trajectories, ldp_scan, mgf_noise_check,
    rate_ingredients, run_replicas, sample_field,
)
from measure_engine import (
    AcThresholds, EmpiricalMeasure, ac_exit_bound, ac_membership, dP_truncated,
    double_layer_measure,
)
from services.ledger_service import RunLedger
from solver_engine import integrate_network, sample_noise
from weights_engine import compute_weights, weight_certificates

log = logging.getLogger("SparseLattice.CLI")


def _print_json(doc):
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _existing(path: str) -> str:
    if not os.path.exists(path):
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _c_grid(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--c-grid: {e}") from e


# ══════════════════════════════════════════════════════════════════════════════
# COMMANDS
# ══════════════════════════════════════════════════════════════════════════════

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out_dir = args.out or cfg.output_dir
    ledger = RunLedger(LEDGER_PATH) if args.store else None
    if args.store:
        run_store.init_db()

    for n in cfg.n_values:
        manifest = run_replicas(cfg, n)
        paths = emit_results(manifest, cfg, out_dir)
        if args.trajectories:
            spec = cfg.spec(n)
            state = integrate_network(sample_noise(spec, cfg.dt, cfg.T, cfg.seed, 0, cfg.sigma),
                                      sample_field(cfg, spec, 0), cfg.fhn, cfg.hebb)
            paths["trajectories"] = emit_trajectories(
                state, os.path.join(out_dir, f"trajectories_{cfg.hash[:12]}_n{n}.csv"))
        if args.store:
            doc = manifest.to_dict()
            run_store.save_run(doc)
            ledger.append_run(doc, paths)
        failed = len(manifest.records) - len(manifest.ok_records())
        print(f"n={n}: {len(manifest.records)} replicas, {failed} failed -> {paths['csv']}")
    return 0


def cmd_weights(args) -> int:
    w = compute_weights(args.m, args.rho, args.d, args.window, args.grid)
    cert = weight_certificates(w)
    if args.csv:
        rows = [{**{f"j{i}": c for i, c in enumerate(j)}, "lambda": v}
                for j, v in sorted(w.values.items())]
        pd.DataFrame(rows).to_csv(args.csv, index=False, lineterminator="\n")
    _print_json({"h": w.h, "lambda_0": w.get((0,) * args.d), "tail_mass": w.tail_mass,
                 "certificates": {k: v for k, v in cert.items()
                                  if k not in ("convolution", "lower_bound")}})
    return 0 if cert["passed"] else 1


def _edge_rows(field) -> pd.DataFrame:
    """Non-null bonds as (j0.., k0.., value) rows; null bonds are omitted."""
    d = field.spec.d
    rows = [{**{f"j{i}": c for i, c in enumerate(j)}, **{f"k{i}": c for i, c in enumerate(k)},
             "value": field.space.elements[e]}
            for (j, k), e in field.entries().items()]
    cols = [f"j{i}" for i in range(d)] + [f"k{i}" for i in range(d)] + ["value"]
    return pd.DataFrame(rows, columns=cols)


def cmd_gibbs(args) -> int:
    """Exact enumeration of Q_m with h, Gamma_m and I_m; optional sampler check and edge list."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    spec = cfg.spec(args.n)
    exact = enumerate_exact(spec, cfg.model, args.m, cfg.space)
    report = rate_ingredients(cfg.model, args.m, spec, space=cfg.space)
    report["states"] = int(len(exact.probs))
    report["bonds"] = len(exact.bonds)

    fields = []
    if args.sweeps > 0:
        fields = [metropolis_sample(spec, cfg.model, args.m, args.sweeps, cfg.seed, cfg.space, r)
                  for r in range(cfg.replicas)]
        if exact.bonds:
            non_null = cfg.space.non_null()[0]
            hits = np.array([[f.get(s, c) == non_null for s, c in exact.bonds] for f in fields])
            report["marginal_tv"] = float(np.max(np.abs(hits.mean(axis=0)
                                                        - exact.marginals(non_null))))
    if args.out:
        field = fields[0] if fields else sample_base_field(spec, cfg.model, cfg.seed, cfg.space)
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        _edge_rows(field).to_csv(args.out, index=False, lineterminator="\n", encoding="utf-8")
        report["edge_list"] = args.out
        report["edge_count"] = len(field)
    _print_json(report)
    return 0


def cmd_metric(args) -> int:
    a = EmpiricalMeasure.load(args.a)
    b = EmpiricalMeasure.load(args.b)
    if a.spec != b.spec:
        log.error("measures live on %s and %s", a.spec, b.spec)
        return 2
    _print_json(dP_truncated(a, b, args.jmax))
    return 0


def cmd_ldp_scan(args) -> int:
    cfg = load_config(args.config)
    table = ldp_scan(cfg, args.event, confidence=args.confidence)
    out_path = args.out or os.path.join(cfg.output_dir, f"ldp_{cfg.hash[:12]}_{args.event}.csv")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    table.to_csv(out_path, index=False, lineterminator="\n", encoding="utf-8")
    print(table.to_string(index=False))
    return 0


def cmd_audit(args) -> int:
    """Drift and interaction constants over simulated single-site paths."""
    cfg = load_config(args.config)
    spec = cfg.spec()
    paths = []
    for r in range(cfg.replicas):
        state = integrate_network(sample_noise(spec, cfg.dt, cfg.T, cfg.seed, r, cfg.sigma),
                                  sample_field(cfg, spec, r), cfg.fhn, cfg.hebb)
        paths.extend(state.U)
        if len(paths) >= args.paths:
            break
    report = assumption_audit(cfg.fhn, paths[:args.paths], cfg.dt, cfg.space, args.weight_fraction)
    _print_json(report)
    return 0 if report["passed"] else 1


def _resolve_run(ref: str):
    """A run given as a manifest JSON file or as a config hash in the run store."""
    if os.path.isfile(ref):
        with open(ref, "r", encoding="utf-8") as f:
            doc = json.load(f)
    else:
        run_store.init_db()
        doc = run_store.get_run(ref)
    if doc is None:
        raise ConfigError(f"no stored run {ref!r}")
    if not doc.get("config"):
        raise ConfigError(f"run {ref!r} carries no config document")
    return from_dict(doc["config"]).with_n(int(doc["n"])), doc


def cmd_ac_check(args) -> int:
    if args.run:
        cfg, manifest = _resolve_run(args.run)
    else:
        cfg, manifest = load_config(args.config), None
    spec = cfg.spec()
    c_level = cfg.ac_c if args.c is None else args.c
    c1 = 0.1 / cfg.T if args.c1 is None else args.c1
    thr = AcThresholds(c=c_level, rho=cfg.rho, C_J=cfg.space.C_J, T=cfg.T,
                       m0=cfg.model.m0, m_max=max(cfg.model.m0, cfg.ac_m_max))

    noises, fields, members = [], [], []
    for r in range(cfg.replicas):
        noise = sample_noise(spec, cfg.dt, cfg.T, cfg.seed, r, cfg.sigma)
        field = sample_field(cfg, spec, r)
        noises.append(noise)
        fields.append(field)
        members.append(ac_membership(double_layer_measure(noise, field), thr))

    mgf = mgf_noise_check(noises, c1, seed=cfg.seed)
    growth = connection_growth_check(fields, list(range(thr.m0, thr.m_max + 1)), args.a1,
                                     cfg.rho, cfg.T, cfg.model)
    a2 = max(row["implied_a2"] for row in growth)
    smallest = [m["smallest_c"] for m in members]
    report = {
        "c": c_level,
        "member_fraction": float(np.mean([m["member"] for m in members])),
        "member_fraction_by_c": {str(c): float(np.mean([s <= c for s in smallest]))
                                 for c in args.c_grid or []},
        "smallest_c": smallest,
        "noise_moment": mgf,
        "connection_moments": growth,
        "exit_rate_bound": ac_exit_bound(args.a1, a2, c1, mgf["estimate"], c_level),
    }
    if manifest is not None:
        report["run"] = {"config_hash": manifest["config_hash"], "n": manifest["n"],
                         "recorded_smallest_c": [r.get("ac_smallest_c") for r in manifest["replicas"]
                                                 if r.get("status") == "ok"]}
    _print_json(report)
    return 0


def cmd_serve(args) -> int:
    from app import app
    app.run(host="0.0.0.0", port=args.port, use_reloader=False)
    return 0


# ══════════════════════════════════════════════════════════════════════════════
# PARSER
# ══════════════════════════════════════════════════════════════════════════════

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Sparse lattice FitzHugh–Nagumo network experiments.")
    parser.add_argument("--log-level", default=None, help="Overrides SPARSE_LATTICE_LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Run every replica at every torus radius of the sweep.")
    p.add_argument("--config", required=True, type=_existing)
    p.add_argument("--out", default=None, help="Output directory (default from env).")
    p.add_argument("--seed", type=int, default=None, help="Overrides experiment.seed.")
    p.add_argument("--trajectories", action=argparse.BooleanOptionalAction, default=False,
                   help="Also write replica 0's (t, site, U, w) table per n.")
    p.add_argument("--store", action=argparse.BooleanOptionalAction, default=True,
                   help="Record the run in the DB and ledger.")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights", help="Compute the weight sequence and print its certificates.")
    p.add_argument("--d", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--m", type=_non_negative, required=True)
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--window", type=int, default=None, help="Stored radius R (default 4m).")
    p.add_argument("--grid", type=int, default=None, help="Quadrature points per axis.")
    p.add_argument("--csv", default=None, help="Write (j, lambda) rows.")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("gibbs", help="Exact Q_m enumeration and rate ingredients.")
    p.add_argument("--config", required=True, type=_existing)
    p.add_argument("--m", type=_non_negative, required=True)
    p.add_argument("--n", type=int, default=None, help="Torus radius (default: first of the sweep).")
    p.add_argument("--sweeps", type=_non_negative, default=0,
                   help="Also run this many Metropolis sweeps per replica and compare marginals.")
    p.add_argument("--seed", type=int, default=None, help="Overrides experiment.seed.")
    p.add_argument("--out", default=None,
                   help="Write the sampled field (replica 0) as a (j, k, value) edge-list CSV.")
    p.set_defaults(func=cmd_gibbs)

    p = sub.add_parser("metric", help="Truncated d_P distance between two saved measures (.npz).")
    p.add_argument("--a", required=True, type=_existing)
    p.add_argument("--b", required=True, type=_existing)
    p.add_argument("--jmax", "--j-max", dest="jmax", type=int, default=2)
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("ldp-scan", help="P(event) and -|V_n|^-1 log P(event) across the n sweep.")
    p.add_argument("--config", required=True, type=_existing)
    p.add_argument("--event", required=True, help="Event name from experiment.events.")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ldp_scan)

    p = sub.add_parser("audit", help="Drift and interaction constants over simulated paths.")
    p.add_argument("--config", required=True, type=_existing)
    p.add_argument("--paths", type=int, default=40, help="Single-site paths fed to the audit.")
    p.add_argument("--weight-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("ac-check", help="A_c membership plus exponential moment diagnostics.")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=_existing)
    source.add_argument("--run", help="Config hash in the run store, or a run manifest JSON file.")
    p.add_argument("--c", type=float, default=None, help="Level c (default experiment.ac_c).")
    p.add_argument("--c-grid", type=_c_grid, default=None,
                   help="Comma-separated levels; reports the member fraction at each.")
    p.add_argument("--c1", type=float, default=None, help="Noise moment constant (default 0.1/T).")
    p.add_argument("--a1", type=float, default=1.0, help="Connection moment constant.")
    p.set_defaults(func=cmd_ac_check)

    p = sub.add_parser("serve", help="Run the HTTP service.")
    p.add_argument("--port", type=int, default=5000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    if getattr(args, "jmax", 1) < 1 or getattr(args, "paths", 2) < 2:
        log.error("--jmax must be >= 1 and --paths >= 2")
        return 2
    if not 0.0 <= getattr(args, "weight_fraction", 0.0) <= 1.0:
        log.error("--weight-fraction must lie in [0, 1]")
        return 2
    try:
        return args.func(args)
    except SparseLatticeError as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
