import logging
import os

from flask import Flask, jsonify, request
from flask_cors import CORS
from datetime import datetime, timezone

import run_store
from config_service import LEDGER_PATH, from_dict, setup_logging
from errors import SparseLatticeError
from harness_engine import run_replicas
from services.ledger_service import RunLedger
from weights_engine import compute_weights, weight_certificates

setup_logging()
log = logging.getLogger("SparseLattice.App")

app = Flask(__name__)
CORS(app)

MAX_HTTP_REPLICAS = int(os.getenv("SPARSE_LATTICE_MAX_HTTP_REPLICAS", "64"))


# ── Helpers ─────────────────────────────────────────────────────────────
def _make_error(message, detail="", code=500):
    return jsonify({"success": False, "error": message, "detail": detail}), code


def _ledger() -> RunLedger:
    return RunLedger(app.config.get("LEDGER_PATH", LEDGER_PATH))


def _db_path():
    return app.config.get("DB_PATH")


# ── Global Exception Handlers ───────────────────────────────────────────
@app.errorhandler(SparseLatticeError)
def handle_domain_error(e):
    log.warning("Rejected request: %s", e)
    return _make_error(type(e).__name__, str(e), 400)


@app.errorhandler(Exception)
def handle_exception(e):
    log.critical("Unhandled exception reached Flask: %s", e, exc_info=True)
    return _make_error("Internal engine failure. Please retry.", str(e), 500)


# ── Health Check ─────────────────────────────────────────────────────────
@app.route('/health')
def health():
    return jsonify({"status": "ok",
                    "timestamp": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")})


@app.route('/simulate', methods=['POST'])
def simulate():
    doc = request.get_json(silent=True)
    if not isinstance(doc, dict):
        return _make_error("Config body must be a JSON object", code=400)
    cfg = from_dict(doc)
    if cfg.replicas > MAX_HTTP_REPLICAS:
        return _make_error("Too many replicas for a synchronous request",
                           f"{cfg.replicas} > {MAX_HTTP_REPLICAS}", 400)

    manifest = run_replicas(cfg).to_dict()
    run_store.init_db(_db_path())
    run_store.save_run(manifest, _db_path())
    entry = _ledger().append_run(manifest)
    ok = [r for r in manifest["replicas"] if r["status"] == "ok"]
    return jsonify({
        "success": True,
        "config_hash": manifest["config_hash"],
        "n": manifest["n"],
        "replicas": len(manifest["replicas"]),
        "failed": len(manifest["replicas"]) - len(ok),
        "ledger_seq": entry["seq"],
        "records": manifest["replicas"],
    })


@app.route('/runs/<string:config_hash>')
def get_run(config_hash):
    run_store.init_db(_db_path())
    manifest = run_store.get_run(config_hash, _db_path())
    if manifest is None:
        return _make_error("Run not found", config_hash, 404)
    return jsonify({"success": True, "manifest": manifest})


@app.route('/weights')
def weights():
    try:
        d = int(request.args.get("d", 1))
        m = int(request.args["m"])
        rho = float(request.args.get("rho", 2.0))
        window = request.args.get("window")
        window = int(window) if window is not None else None
    except (KeyError, ValueError) as e:
        return _make_error("Bad weights query", f"need integer d, m and real rho ({e})", 400)
    if rho <= 1 or m < 0 or d not in (1, 2, 3):
        return _make_error("Bad weights query", "require rho > 1, m >= 0, d in {1,2,3}", 400)

    w = compute_weights(m, rho, d, window)
    cert = weight_certificates(w)
    return jsonify({
        "success": True,
        "d": d, "m": m, "rho": rho, "window": w.window_radius,
        "h": w.h, "tail_mass": w.tail_mass,
        "values": [{"j": list(j), "lambda": v} for j, v in sorted(w.values.items())],
        "certificates": {k: cert[k] for k in ("positivity", "sum_identity", "h",
                                              "min_convolution_slack", "lower_bound_passed",
                                              "passed")},
    })


@app.route('/ledger/validate')
def validate_ledger():
    ledger = _ledger()
    broken = ledger.first_broken()
    return jsonify({"success": True, "valid": broken is None, "first_broken": broken,
                    "records": len(ledger.records)})


if __name__ == '__main__':
    log.info("Starting the sparse lattice service on port 5000")
    app.run(host='0.0.0.0', port=5000, use_reloader=False)
