"""File formats: JSON models and configs, CSV tables, run manifests.

A model file is one JSON object::

    {"chains": [{"name": "a", "states": [0, 1]}],
     "events": [{"name": "rec_a", "rate_constant": 0.2,
                 "reactants": {"a": {"order": 1, "state": 1}},
                 "delta": {"a": -1}, "group": "recovery"}],
     "observation_models": {"chains": {"a": {"matrix": [[0.9, 0.1], [0.1, 0.9]]}}},
     "metadata": {}}

A reactant may also be a bare integer order.  CSV floats are written with
17 significant digits so that values survive a round trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .epidemics import ContactNetwork, ContactWindow, EpidemicConfig, small_world_network
from .errors import ValidationError
from .model import ChainSpec, EventSpec, ModelSpec, Reactant, SystemState
from .observations import MISSING, ChainObservation, ObservationModelSpec, ObservationSet
from .rng import RNG_SCHEME

FLOAT_FMT = ".17g"


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), FLOAT_FMT)
    return str(x)


def read_json(path: str | Path) -> Any:
    path = Path(path)
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _require(obj: Mapping, key: str, where: str):
    if not isinstance(obj, Mapping):
        raise ValidationError(f"{where}: expected an object")
    if key not in obj:
        raise ValidationError(f"{where}: missing field {key!r}")
    return obj[key]


# ---------------------------------------------------------------- models

def model_from_dict(doc: Mapping) -> tuple[ModelSpec, ObservationModelSpec]:
    chains = []
    for i, c in enumerate(_require(doc, "chains", "model")):
        where = f"chains[{i}]"
        chains.append(ChainSpec(str(_require(c, "name", where)), tuple(_require(c, "states", where)),
                                str(c.get("label", ""))))
    names = {c.name for c in chains}
    events = []
    for i, e in enumerate(_require(doc, "events", "model")):
        where = f"events[{i}]"
        name = str(_require(e, "name", where))
        where = f"events[{i}] ({name!r})"
        reactants = e.get("reactants", {})
        delta = e.get("delta", {})
        if not isinstance(reactants, Mapping) or not isinstance(delta, Mapping):
            raise ValidationError(f"{where}: reactants and delta must be objects keyed by chain")
        for chain in list(reactants) + list(delta):
            if chain not in names:
                raise ValidationError(f"{where}: unknown chain {chain!r}")
        try:
            rate = float(_require(e, "rate_constant", where))
        except (TypeError, ValueError):
            raise ValidationError(f"{where}: rate_constant must be a number") from None
        events.append(EventSpec(name, rate, reactants, delta, e.get("group"), str(e.get("label", ""))))
    model = ModelSpec(tuple(chains), tuple(events), dict(doc.get("metadata", {})))
    obs_model = observation_model_from_dict(doc.get("observation_models", {}), model)
    return model, obs_model


def observation_model_from_dict(doc: Mapping, model: ModelSpec) -> ObservationModelSpec:
    specs = {}
    for name, o in dict(doc.get("chains", {})).items():
        if name not in {c.name for c in model.chains}:
            raise ValidationError(f"observation_models: unknown chain {name!r}")
        specs[name] = ChainObservation(
            None if o.get("matrix") is None else np.asarray(o["matrix"], dtype=float),
            None if o.get("symbols") is None else tuple(int(s) for s in o["symbols"]),
            float(o.get("observe_prob", 1.0)),
        )
    out = ObservationModelSpec(specs, doc.get("volunteer_fraction"))
    out.validate(model)
    return out


def model_to_dict(model: ModelSpec, obs_model: ObservationModelSpec | None = None) -> dict:
    doc = {
        "chains": [{"name": c.name, "states": list(c.states), "label": c.label} for c in model.chains],
        "events": [],
        "metadata": dict(model.metadata),
    }
    for e in model.events:
        reactants = {k: ({"order": r.order} if r.state is None else {"order": r.order, "state": r.state})
                     for k, r in e.reactants.items()}
        item = {"name": e.name, "rate_constant": float(e.rate_constant), "reactants": reactants,
                "delta": dict(e.delta), "label": e.label}
        if e.group is not None:
            item["group"] = e.group
        doc["events"].append(item)
    if obs_model is not None:
        chains = {}
        for name, o in obs_model.chains.items():
            item = {"observe_prob": o.observe_prob}
            if o.matrix is not None:
                item["matrix"] = np.asarray(o.matrix).tolist()
            if o.symbols is not None:
                item["symbols"] = list(o.symbols)
            chains[name] = item
        doc["observation_models"] = {"chains": chains}
        if obs_model.volunteer_fraction is not None:
            doc["observation_models"]["volunteer_fraction"] = obs_model.volunteer_fraction
    return doc


def load_model(path) -> tuple[ModelSpec, ObservationModelSpec]:
    doc = read_json(path)
    try:
        return model_from_dict(doc)
    except ValidationError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    except (TypeError, ValueError, AttributeError) as exc:
        raise ValidationError(f"{path}: malformed model: {exc}") from None


def save_model(path, model: ModelSpec, obs_model: ObservationModelSpec | None = None) -> None:
    write_json(path, model_to_dict(model, obs_model))


def load_state(path, model: ModelSpec) -> SystemState:
    """``{"state": {chain: value}, "time": 0}``; chains left out must be listed."""
    doc = read_json(path)
    values = _require(doc, "state", str(path))
    if isinstance(values, Mapping):
        missing = [c.name for c in model.chains if c.name not in values]
        if missing:
            raise ValidationError(f"{path}: no initial value for chains {missing}")
        unknown = set(values) - {c.name for c in model.chains}
        if unknown:
            raise ValidationError(f"{path}: unknown chains {sorted(unknown)}")
        values = [values[c.name] for c in model.chains]
    return model.check_state(SystemState(tuple(values), float(doc.get("time", 0.0))))


def load_init_distribution(path, model: ModelSpec) -> list[np.ndarray] | None:
    """Per-chain initial distributions ``{"init": {chain: [p, ...]}}``; uniform where omitted."""
    if path is None:
        return None
    doc = read_json(path)
    if "state" in doc:
        state = load_state(path, model)
        return [np.eye(c.size)[c.index_of(v)] for c, v in zip(model.chains, state.values)]
    dist = _require(doc, "init", str(path))
    out = []
    for c in model.chains:
        p = dist.get(c.name)
        out.append(np.full(c.size, 1.0 / c.size) if p is None else np.asarray(p, dtype=float))
    return out


# ---------------------------------------------------------------- tables

def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path, header: list[str]) -> list[dict]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames is None or [h.strip() for h in r.fieldnames] != header:
            raise ValidationError(f"{path}: expected header {','.join(header)}, got {r.fieldnames}")
        return [dict(row) for row in r]


def write_frames(path, model: ModelSpec, frames: np.ndarray) -> None:
    write_csv(path, ["t", "chain", "state"],
              ((t, c.name, int(frames[t, m])) for t in range(frames.shape[0]) for m, c in enumerate(model.chains)))


def read_frames(path, model: ModelSpec) -> np.ndarray:
    rows = read_csv(path, ["t", "chain", "state"])
    T = max(int(r["t"]) for r in rows) if rows else 0
    out = np.full((T + 1, model.M), -1, dtype=np.int64)
    for i, r in enumerate(rows, start=2):
        try:
            m = model.chain_index(r["chain"])
            out[int(r["t"]), m] = int(r["state"])
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"{path}: line {i}: {exc}") from None
    if np.any(out < 0):
        raise ValidationError(f"{path}: frames are incomplete")
    return out


def write_grid_events(path, model: ModelSpec, events: np.ndarray) -> None:
    write_csv(path, ["t", "event"], ((t + 1, "" if v < 0 else model.events[v].name) for t, v in enumerate(events)))


def read_grid_events(path, model: ModelSpec) -> np.ndarray:
    rows = read_csv(path, ["t", "event"])
    out = np.full(len(rows), -1, dtype=np.intp)
    for i, r in enumerate(rows):
        if int(r["t"]) != i + 1:
            raise ValidationError(f"{path}: line {i + 2}: steps must run 1..T in order")
        if r["event"]:
            out[i] = model.event_index(r["event"])
    return out


def write_observations(path, model: ModelSpec, obs: ObservationSet) -> None:
    y = obs.y
    write_csv(path, ["t", "chain", "symbol"],
              ((t, c.name, int(y[t, m])) for t in range(y.shape[0]) for m, c in enumerate(model.chains)
               if y[t, m] != MISSING))


def read_observations(path, model: ModelSpec, obs_model: ObservationModelSpec, steps: int | None = None) -> ObservationSet:
    """``t,chain,symbol`` rows; absent (step, chain) pairs are missing.  ``steps`` fixes ``T``."""
    rows = read_csv(path, ["t", "chain", "symbol"])
    T = steps if steps is not None else (max(int(r["t"]) for r in rows) if rows else 0)
    y = np.full((T + 1, model.M), MISSING, dtype=np.int64)
    for i, r in enumerate(rows, start=2):
        try:
            t = int(r["t"])
            if not 0 <= t <= T:
                raise ValidationError(f"step {t} outside 0..{T}")
            y[t, model.chain_index(r["chain"])] = int(r["symbol"])
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"{path}: line {i}: {exc}") from None
    return ObservationSet.from_values(model, y, obs_model)


# ---------------------------------------------------------------- epidemics

def network_from_dict(doc: Mapping, seed: int = 0) -> ContactNetwork:
    """Either explicit windows or ``{"generator": "small_world", ...}`` parameters."""
    if "generator" in doc:
        params = dict(doc)
        kind = params.pop("generator")
        if kind != "small_world":
            raise ValidationError(f"unknown network generator {kind!r}")
        if "active_hours" in params:
            params["active_hours"] = tuple(params["active_hours"])
        try:
            return small_world_network(seed=int(params.pop("seed", seed)), **params)
        except TypeError as exc:
            raise ValidationError(f"network generator: {exc}") from None
    windows = _require(doc, "windows", "network")
    if not windows:
        raise ValidationError("network: no windows")
    wins = tuple(ContactWindow(int(_require(w, "start", f"windows[{i}]")), int(_require(w, "stop", f"windows[{i}]")),
                               tuple(tuple(e) for e in w.get("edges", []))) for i, w in enumerate(windows))
    return ContactNetwork(int(_require(doc, "num_agents", "network")), wins, float(_require(doc, "tau", "network")))


def network_to_dict(net: ContactNetwork) -> dict:
    return {"num_agents": net.num_agents, "tau": net.tau,
            "windows": [{"start": w.start, "stop": w.stop, "edges": [list(e) for e in w.edges]} for w in net.windows]}


def epidemic_config_from_dict(doc: Mapping, network: ContactNetwork) -> EpidemicConfig:
    """Explicit ``c1, c2, c3`` or ``{"calibrate": {...}}`` keyword arguments."""
    extra = {k: doc[k] for k in ("volunteer_fraction", "initial_prevalence") if k in doc}
    if "report_noise" in doc:
        extra["report_noise"] = tuple(tuple(float(x) for x in row) for row in doc["report_noise"])
    if "calibrate" in doc:
        return EpidemicConfig.calibrated(network, **dict(doc["calibrate"]), **extra)
    return EpidemicConfig(float(_require(doc, "c1", "epidemic config")), float(_require(doc, "c2", "epidemic config")),
                          float(_require(doc, "c3", "epidemic config")), **extra)


# ---------------------------------------------------------------- manifests

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What produced an output directory.  Everything except timing is deterministic."""

    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    version: str = ""
    started: float = field(default_factory=time.time)
    elapsed: float = 0.0
    status: str = "ok"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(_plain(self.config), sort_keys=True).encode()).hexdigest()

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        write_json(path, {
            "command": self.command, "config": self.config, "config_hash": self.config_hash,
            "seed": self.seed, "rng_scheme": RNG_SCHEME, "inputs": self.inputs,
            "outputs": sorted(self.outputs), "tool_version": self.version,
            "started_unix": self.started, "elapsed_seconds": self.elapsed, "status": self.status,
        })
        return path


def resolve_seed(flag: int | None, file_value: int | None = None, default: int = 0) -> int:
    """Seed precedence: command-line flag, then ``SKM_SEED``, then the config file."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("SKM_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"SKM_SEED must be an integer, got {env!r}") from None
    if file_value is not None:
        return int(file_value)
    return default

