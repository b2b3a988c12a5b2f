"""
ledger_service.py — Run Ledger
===============================
Append-only JSON list of run records. Each record is the summary of one run
manifest plus two chain fields: `previous_hash` (the hash of the record before
it, or ROOT_HASH for the first) and `hash` (SHA-256 of the record's own
canonical JSON without the `hash` field).
"""

import hashlib
import json
import logging
import os
from datetime import datetime, timezone

log = logging.getLogger("SparseLattice.Ledger")

ROOT_HASH = "0" * 64


def _sha256(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def record_hash(record: dict) -> str:
    return _sha256({k: v for k, v in record.items() if k != "hash"})


def run_record(manifest: dict, outputs: dict | None = None) -> dict:
    """The ledger summary of a manifest, without chain fields."""
    replicas = manifest.get("replicas", [])
    return {
        "config_hash": manifest["config_hash"],
        "seed": manifest.get("seed"),
        "n": manifest.get("n"),
        "replicas": len(replicas),
        "failed": sum(1 for r in replicas if r.get("status") != "ok"),
        "manifest_sha256": _sha256(manifest),
        "outputs": outputs or {},
    }


class RunLedger:
    """Hash-chained list of run records stored at `storage_path`."""

    def __init__(self, storage_path="data/ledger.json"):
        self.storage_path = storage_path
        self.records = self._load()

    def _load(self) -> list:
        if not os.path.exists(self.storage_path):
            return []
        try:
            with open(self.storage_path, 'r', encoding="utf-8") as f:
                records = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            log.error("Ledger load error (%s); starting an empty ledger", e)
            return []
        if not isinstance(records, list):
            log.error("Ledger at %s is not a record list; starting an empty ledger", self.storage_path)
            return []
        return records

    def _save(self):
        folder = os.path.dirname(self.storage_path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(self.storage_path, 'w', encoding="utf-8") as f:
            json.dump(self.records, f, indent=2)

    def append_run(self, manifest: dict, outputs: dict | None = None) -> dict:
        record = {
            "seq": len(self.records),
            "recorded_at": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            **run_record(manifest, outputs),
            "previous_hash": self.records[-1]["hash"] if self.records else ROOT_HASH,
        }
        record["hash"] = record_hash(record)
        self.records.append(record)
        self._save()
        log.info("Ledger record %d for run %s…", record["seq"], record["config_hash"][:8])
        return record

    def first_broken(self) -> int | None:
        """Position of the first record that fails its own hash, its link or its sequence number."""
        previous = ROOT_HASH
        for i, record in enumerate(self.records):
            if record.get("seq") != i:
                log.warning("Ledger record %d carries seq %s", i, record.get("seq"))
                return i
            if record.get("hash") != record_hash(record):
                log.warning("Ledger record %d hash mismatch", i)
                return i
            if record.get("previous_hash") != previous:
                log.warning("Ledger record %d does not link to its predecessor", i)
                return i
            previous = record["hash"]
        return None

    def verify(self) -> bool:
        return self.first_broken() is None

    def runs_for(self, config_hash: str) -> list:
        return [r for r in self.records if r.get("config_hash") == config_hash]
