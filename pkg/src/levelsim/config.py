"""JSON run configurations.

A config file holds one JSON object.  ``scenario`` picks the model; every
other key is either a run setting (``times``, ``replicates``, ...) or a
parameter of that scenario.  Parsing checks everything it can and reports
all problems at once.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .engine import SpatialModel, ceiling_model, scalar_model
from .errors import ConfigError, LevelSimError
from .levels import OffspringRates
from .streams import DEFAULT_SEED
from .variants import (
    CatastropheSpec,
    EngineConfig,
    EnvironmentSpec,
    ImmigrationSpec,
    MultitypeSpec,
    Variants,
    condition_extinction,
    condition_nonextinction,
)

RUN_KEYS = {
    "scenario": None,
    "times": [1.0],
    "replicates": 1000,
    "seed": DEFAULT_SEED,
    "workers": 1,
    "out": "out",
    "events": False,
}

_SCALAR = {"a": 1.0, "b": 0.0, "r": 1.0, "n0": 5}

# per-scenario parameters and their defaults
SCENARIOS: Dict[str, Dict[str, Any]] = {
    "base": dict(_SCALAR),
    "pure_death": {"a": 0.0, "b": -1.0, "r": 1.0, "n0": 5},
    "conditioned_nonext": {"a": 1.0, "b": -0.5, "r": 1.0, "n0": 2},
    "conditioned_ext": {"a": 1.0, "b": 0.5, "r": 2.0, "n0": 5},
    "harris": {"a": 1.0, "b": 0.5, "r": 1.0, "n0": 1},
    "feller": {"a": 1.0, "b": 0.0, "r": 100.0, "window": 25.0},
    "genealogy": {"a": 1.0, "b": 0.0, "r": 5.0, "n0": 5, "grid": 20},
    "immigration": dict(_SCALAR, nu=1.0),
    "multitype": {"a": 1.0, "b": 0.0, "r": 1.0, "n0": 4,
                  "type_rates": [[0.5, 0.5], [0.3, 0.4]], "type_b": [0.2, -0.1]},
    "multioffspring": {"b": 0.0, "r": 1.0, "n0": 5, "offspring": [0.0, 0.5]},
    "catastrophe": dict(_SCALAR, b=0.5, event_rate=1.0, marks=[[1.0, 2.0]]),
    "environment": {"Q": [[-1.0, 1.0], [1.0, -1.0]], "env_a": [1.0, 1.0], "env_b": [1.0, -1.0],
                    "mode": "limit", "window": 2.0, "lam_max": 40.0, "y0": 1.0, "n0": 5,
                    "r": 10.0, "speedup": 1.0, "h": 1e-3},
    "exp_levels": dict(_SCALAR, b=0.5),
    "cox": {"mass": 1.0, "window": 10.0},
}

# scenarios the fast scalar kernel can run when no event log is requested
KERNEL_SCENARIOS = {"base", "pure_death", "conditioned_nonext", "conditioned_ext", "harris", "immigration"}


@dataclass
class RunConfig:
    scenario: str
    params: Dict[str, Any]
    times: List[float] = field(default_factory=lambda: [1.0])
    replicates: int = 1000
    seed: int = DEFAULT_SEED
    workers: int = 1
    out: str = "out"
    events: bool = False
    engine_config: Optional[EngineConfig] = None

    @property
    def n0(self) -> int:
        return int(self.params.get("n0", 0))


def _number(problems: List[str], key: str, value, integer: bool = False, positive: bool = False,
            nonneg: bool = False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if ok and integer and int(value) != value:
        ok = False
    if not ok:
        problems.append(f"{key}: expected a finite {'integer' if integer else 'number'}, got {value!r}")
        return None
    if positive and not value > 0:
        problems.append(f"{key}: must be > 0, got {value}")
    if nonneg and value < 0:
        problems.append(f"{key}: must be >= 0, got {value}")
    return int(value) if integer else float(value)


def _collect(problems: List[str], fn, *args, **kw):
    """Call a constructor, moving its validation errors into ``problems``."""
    try:
        return fn(*args, **kw)
    except ConfigError as e:
        problems.extend(e.problems)
    except (LevelSimError, ValueError, TypeError) as e:
        problems.append(str(e))
    return None


def _scalar_model(problems, p) -> Optional[SpatialModel]:
    return _collect(problems, scalar_model, p["a"], p["b"], p["r"])


def build_engine_config(scenario: str, p: Dict[str, Any], problems: List[str]) -> Optional[EngineConfig]:
    """Model objects for a scenario; constructor errors are appended to ``problems``."""
    if scenario in ("base", "pure_death", "harris", "genealogy"):
        m = _scalar_model(problems, p)
        if m is not None and scenario == "harris" and not 0 < p["b"] < p["r"] * p["a"]:
            problems.append(f"harris: need 0 < b < r*a, got b={p['b']}, r*a={p['r'] * p['a']}")
        return EngineConfig(m) if m else None
    if scenario == "feller":
        if p["window"] > p["r"]:
            problems.append(f"window {p['window']} must not exceed r={p['r']}")
        if p["b"] != 0:
            problems.append("feller: the windowed estimator needs b = 0")
        m = _scalar_model(problems, p)
        return EngineConfig(m) if m else None
    if scenario == "exp_levels":
        m = _collect(problems, scalar_model, p["a"], p["b"], p["r"], level_mode="exponential")
        return EngineConfig(m) if m else None
    if scenario == "conditioned_nonext":
        m = _scalar_model(problems, p)
        return _collect(problems, condition_nonextinction, m) if m else None
    if scenario == "conditioned_ext":
        m = _scalar_model(problems, p)
        return _collect(problems, condition_extinction, m) if m else None
    variants = None
    m = None
    if scenario == "immigration":
        m = _scalar_model(problems, p)
        spec = _collect(problems, ImmigrationSpec, p["nu"])
        variants = Variants(immigration=spec) if spec else None
    elif scenario == "multitype":
        m = _scalar_model(problems, p)
        spec = _collect(problems, MultitypeSpec, p["type_rates"], p["type_b"])
        variants = Variants(multitype=spec) if spec else None
    elif scenario == "multioffspring":
        rates = _collect(problems, OffspringRates, p["offspring"])
        if rates is not None:
            # the level coefficient a is unused; births come from the offspring rates
            m = _collect(problems, scalar_model, 0.0, p["b"], p["r"])
            variants = Variants(offspring=rates)
    elif scenario == "catastrophe":
        m = _scalar_model(problems, p)
        spec = _collect(problems, lambda: CatastropheSpec(p["event_rate"], [tuple(x) for x in p["marks"]]))
        variants = Variants(catastrophe=spec) if spec else None
    elif scenario == "environment":
        spec = _collect(problems, EnvironmentSpec, p["Q"], p["env_a"], p["env_b"], p["speedup"])
        if p["mode"] not in ("limit", "prelimit"):
            problems.append(f"mode: expected 'limit' or 'prelimit', got {p['mode']!r}")
        elif spec is not None:
            if p["mode"] == "limit":
                m = _collect(problems, ceiling_model, spec.abar, 0.0, p["window"], p["lam_max"])
            else:
                m = _collect(problems, scalar_model, spec.abar, 0.0, p["r"])
            variants = Variants(environment=spec)
    elif scenario == "cox":
        return None
    if m is None or variants is None:
        return None
    before = len(problems)
    _collect(problems, variants.check, m)
    return EngineConfig(m, variants) if len(problems) == before else None


def parse_config_dict(raw: Dict[str, Any]) -> RunConfig:
    """Validate a decoded config object; raises ConfigError listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    problems: List[str] = []
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError([f"scenario: expected one of {sorted(SCENARIOS)}, got {scenario!r}"])
    defaults = SCENARIOS[scenario]
    for key in raw:
        if key not in RUN_KEYS and key not in defaults:
            problems.append(f"unknown key {key!r} for scenario {scenario!r}")
    run = {k: raw.get(k, v) for k, v in RUN_KEYS.items()}
    params = {k: raw.get(k, v) for k, v in defaults.items()}

    times = run["times"]
    if not isinstance(times, list) or not times:
        problems.append(f"times: expected a nonempty list, got {times!r}")
        times = []
    else:
        times = [_number(problems, "times", t, nonneg=True) for t in times]
        if None not in times and any(b < a for a, b in zip(times, times[1:])):
            problems.append("times: must be ascending")
    replicates = _number(problems, "replicates", run["replicates"], integer=True, positive=True)
    seed = _number(problems, "seed", run["seed"], integer=True, nonneg=True)
    if seed is not None and seed >= 2**64:
        problems.append("seed: must fit in 64 bits")
    workers = _number(problems, "workers", run["workers"], integer=True, positive=True)
    if not isinstance(run["out"], str) or not run["out"]:
        problems.append("out: expected a directory path")
    if not isinstance(run["events"], bool):
        problems.append("events: expected true or false")

    before_params = len(problems)
    for key in ("a", "b", "r", "window", "lam_max", "y0", "speedup", "h", "nu", "event_rate", "mass"):
        if key in params:
            positive = key in ("r", "window", "lam_max", "speedup", "h")
            nonneg = key in ("a", "y0", "nu", "event_rate", "mass")
            params[key] = _number(problems, key, params[key], positive=positive, nonneg=nonneg)
    for key in ("n0", "grid"):
        if key in params:
            params[key] = _number(problems, key, params[key], integer=True, nonneg=True)
    if scenario == "genealogy" and run["events"] is False:
        run["events"] = True  # genealogy queries need the recorded history

    cfg = None
    if len(problems) == before_params:
        # model constraints are checked even when unrelated keys were rejected
        cfg = build_engine_config(scenario, params, problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(scenario, params, times, replicates, seed, workers, run["out"], run["events"], cfg)


def parse_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: invalid JSON ({e})"]) from e
    return parse_config_dict(raw)
