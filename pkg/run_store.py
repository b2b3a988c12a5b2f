"""
run_store.py — Run Manifest Store
==================================
sqlite index of completed runs keyed by config hash, with a JSON copy of
every manifest under reports/ so a run survives a lost database.
"""

import glob
import json
import logging
import os
import sqlite3

from config_service import DB_PATH

log = logging.getLogger("SparseLattice.Store")

REPORTS_DIR = os.path.join(os.path.dirname(os.path.abspath(DB_PATH)), "reports")


def _get_connection(db_path: str | None = None):
    conn = sqlite3.connect(db_path or DB_PATH)
    conn.row_factory = sqlite3.Row
    return conn


def _reports_dir(db_path: str | None) -> str:
    return REPORTS_DIR if db_path is None else os.path.join(os.path.dirname(os.path.abspath(db_path)), "reports")


def init_db(db_path: str | None = None):
    os.makedirs(_reports_dir(db_path), exist_ok=True)
    conn = _get_connection(db_path)
    conn.execute('''
        CREATE TABLE IF NOT EXISTS runs (
            config_hash TEXT PRIMARY KEY,
            seed INTEGER,
            n INTEGER,
            replicas INTEGER,
            failed INTEGER,
            manifest_json TEXT,
            created_at TEXT DEFAULT (datetime('now'))
        )
    ''')
    conn.commit()
    conn.close()
    log.info("Initialized run store at %s", db_path or DB_PATH)


def save_run(manifest: dict, db_path: str | None = None):
    """Upserts one manifest; also writes reports/<config_hash>.json."""
    key = manifest["config_hash"]
    serialized = json.dumps(manifest, sort_keys=True)
    records = manifest.get("replicas", [])
    failed = sum(1 for r in records if r.get("status") != "ok")

    try:
        path = os.path.join(_reports_dir(db_path), f"{key}.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(serialized)
    except OSError as e:
        log.warning("Could not write report backup for %s…: %s", key[:8], e)

    conn = _get_connection(db_path)
    try:
        conn.execute('''
            INSERT INTO runs (config_hash, seed, n, replicas, failed, manifest_json)
            VALUES (?, ?, ?, ?, ?, ?)
            ON CONFLICT(config_hash) DO UPDATE SET
                seed=excluded.seed, n=excluded.n, replicas=excluded.replicas,
                failed=excluded.failed, manifest_json=excluded.manifest_json
        ''', (key, manifest.get("seed"), manifest.get("n"), len(records), failed, serialized))
        conn.commit()
        log.info("Saved run %s… (%d replicas, %d failed)", key[:8], len(records), failed)
    finally:
        conn.close()


def get_run(config_hash: str, db_path: str | None = None) -> dict | None:
    conn = _get_connection(db_path)
    row = conn.execute('SELECT manifest_json FROM runs WHERE config_hash = ?', (config_hash,)).fetchone()
    conn.close()
    if row is not None:
        return json.loads(row["manifest_json"])

    path = os.path.join(_reports_dir(db_path), f"{config_hash}.json")
    if os.path.exists(path):
        log.warning("Run %s… missing from DB, recovered from report backup", config_hash[:8])
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    return None


def list_runs(db_path: str | None = None) -> list:
    conn = _get_connection(db_path)
    rows = conn.execute(
        'SELECT config_hash, seed, n, replicas, failed, created_at FROM runs ORDER BY created_at, config_hash'
    ).fetchall()
    conn.close()
    return [dict(r) for r in rows]


def clear_all(db_path: str | None = None):
    conn = _get_connection(db_path)
    conn.execute('DELETE FROM runs')
    conn.commit()
    conn.close()
    for f in glob.glob(os.path.join(_reports_dir(db_path), "*.json")):
        try:
            os.remove(f)
        except OSError as e:
            log.warning("Could not remove %s: %s", f, e)
    log.info("Cleared all runs and reports.")
