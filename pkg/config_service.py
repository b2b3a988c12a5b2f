"""
config_service.py — Experiment Configuration
=============================================
One JSON document drives every run:

    {
      "torus":        {"d": 1, "n": [1, 2, 3]},
      "dynamics":     {"a", "c", "f", "v_act", "j_corr", "j_dec", "j_bar", "g_ini"},
      "connectivity": {"upsilon", "gamma", "m0", "p_near", "potentials", "sweeps"},
      "integration":  {"dt", "T", "sigma"},
      "experiment":   {"replicas", "seed", "observables", "events", "rho",
                       "pair_m", "ac_c", "ac_m_max"}
    }

Deployment settings (output directory, database, worker count, log level)
come from the environment via .env, never model inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any

from dotenv import load_dotenv

from connectivity_engine import ConnSpace, GibbsModel
from dynamics_engine import FhnParams, HebbParams, normalized_gain, scalar_map
from errors import ConfigError
from lattice_engine import TorusSpec

load_dotenv()

log = logging.getLogger("SparseLattice.Config")

SECTIONS = ("torus", "dynamics", "connectivity", "integration", "experiment")

OUTPUT_DIR = os.getenv("SPARSE_LATTICE_OUTPUT_DIR", "results")
DB_PATH = os.getenv("SPARSE_LATTICE_DB_PATH", os.path.join(os.path.dirname(__file__), "runs.db"))
LEDGER_PATH = os.getenv("SPARSE_LATTICE_LEDGER_PATH", os.path.join("data", "ledger.json"))
WORKERS = int(os.getenv("SPARSE_LATTICE_WORKERS", "4"))
LOG_LEVEL = os.getenv("SPARSE_LATTICE_LOG_LEVEL", "INFO")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s — %(message)s"


def setup_logging(level: str | None = None):
    lvl = getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO)
    logging.basicConfig(level=lvl, format=LOG_FORMAT)
    logging.getLogger().setLevel(lvl)


@dataclass
class EventDef:
    """Named predicate `observable op threshold` on a replica summary."""
    name: str
    observable: str
    op: str
    threshold: float

    OPS = {">": float.__gt__, ">=": float.__ge__, "<": float.__lt__, "<=": float.__le__}

    def __post_init__(self):
        if self.op not in self.OPS:
            raise ConfigError(f"event {self.name}: unknown comparison {self.op!r}")

    def holds(self, value: float) -> bool:
        return bool(self.OPS[self.op](float(value), float(self.threshold)))


@dataclass
class ExperimentConfig:
    d: int
    n_values: list
    fhn: FhnParams
    hebb: HebbParams
    model: GibbsModel
    space: ConnSpace
    sweeps: int
    dt: float
    T: float
    sigma: float
    replicas: int
    seed: int
    observables: list
    events: list
    rho: float
    pair_m: list
    ac_c: float
    ac_m_max: int
    raw: dict = field(default_factory=dict, repr=False)
    workers: int = WORKERS
    output_dir: str = OUTPUT_DIR

    def spec(self, n: int | None = None) -> TorusSpec:
        return TorusSpec(self.d, self.n_values[0] if n is None else n)

    def with_n(self, n: int) -> "ExperimentConfig":
        raw = json.loads(json.dumps(self.raw))
        raw["torus"]["n"] = [n]
        return from_dict(raw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("experiment", {})["seed"] = int(seed)
        return from_dict(raw)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return sec


def from_dict(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    torus = _section(doc, "torus")
    dyn = _section(doc, "dynamics")
    conn = _section(doc, "connectivity")
    integ = _section(doc, "integration")
    exp = _section(doc, "experiment")

    n_values = torus.get("n", [1])
    n_values = [int(n_values)] if isinstance(n_values, (int, float)) else [int(n) for n in n_values]
    if not n_values:
        raise ConfigError("torus.n must name at least one radius")

    try:
        fhn = FhnParams(
            a=float(dyn.get("a", 0.7)),
            c=float(dyn.get("c", 1.25)),
            f=normalized_gain(scalar_map(dyn.get("f", "tanh"))),
            v_act=scalar_map(dyn.get("v_act", "sigmoid")),
        )
        hebb = HebbParams(
            j_corr=float(dyn.get("j_corr", 1.0)),
            j_dec=float(dyn.get("j_dec", 0.5)),
            j_bar=float(dyn.get("j_bar", 1.0)),
            g_ini=float(dyn.get("g_ini", 0.5)),
        )
        model = GibbsModel.from_dict(conn)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(str(e)) from e

    d = int(torus.get("d", 1))
    if d not in (1, 2, 3):
        raise ConfigError(f"FitzHugh–Nagumo networks run in d in {{1,2,3}}, got {d}")

    replicas = int(exp.get("replicas", 1))
    if replicas < 1:
        raise ConfigError("experiment.replicas must be at least 1")

    from harness_engine import OBSERVABLES  # late import: harness imports this module
    observables = list(exp.get("observables", ["mean_terminal"]))
    events = [EventDef(**e) for e in exp.get("events", [])]
    for name in observables + [e.observable for e in events]:
        if name not in OBSERVABLES:
            raise ConfigError(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}")
    for e in events:
        if e.observable not in observables:
            observables.append(e.observable)

    return ExperimentConfig(
        d=d, n_values=n_values, fhn=fhn, hebb=hebb, model=model,
        space=ConnSpace.binary(hebb.j_bar),
        sweeps=int(conn.get("sweeps", 0)),
        dt=float(integ.get("dt", 1e-3)), T=float(integ.get("T", 1.0)),
        sigma=float(integ.get("sigma", 1.0)),
        replicas=replicas, seed=int(exp.get("seed", 0)),
        observables=observables, events=events,
        rho=float(exp.get("rho", 2.0)),
        pair_m=[int(m) for m in exp.get("pair_m", [])],
        ac_c=float(exp.get("ac_c", 1.0)),
        ac_m_max=int(exp.get("ac_m_max", 2)),
        raw=json.loads(canonical_json(doc)),
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = from_dict(doc)
    log.info("Loaded config %s (hash %s…)", path, cfg.hash[:12])
    return cfg
