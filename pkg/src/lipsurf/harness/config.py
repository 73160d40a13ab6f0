"""Run configuration: a single JSON document validated before anything runs."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..lattice import LAWS, LatticeWindow, sample_conductances
from ..tess import SchemaError, SchemaParams, desk_schema, strict_schema

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config", "seed_for", "EXPERIMENTS"]

EXPERIMENTS = ("run", "tail", "infect", "surround", "mixing")

DEFAULTS = {
    "experiment": "run",
    "lattice": {"d": 2, "L": 64, "cm": 2.0, "law": "uniform", "seed": None, "boundary": "reflecting"},
    "schema": {"preset": "desk", "n": 2, "lambda0": 3.0},
    "event": {"name": "k_dense", "params": {}},
    "n_seeds": 4,
    "master_seed": 0,
    "output_dir": "lipsurf_out",
    "alpha": 0.01,
    "horizon": None,
    "taus": None,
    "policy": "treat-open",
    "indicators": True,
    "workers": 1,
    "tail": {"source": "bernoulli", "p_bad": 0.05, "r_min": 2, "r_max": 15, "base_dim": 2, "log_c": 1.0},
    "infect": {"t_end": 200.0, "n_grid": 2001, "fit_until": 0.8, "lambda0": None},
    "surround": {"source": "bernoulli", "p_bad": 0.05, "radii": [0, 1, 2, 3, 4, 5, 6, 8, 10], "base_dim": 2},
    "mixing": {"eps": 0.5, "K": 16, "K_in": 8, "l_sub": 4, "delta": 8.0, "q": 0.5},
}


class ConfigError(ValueError):
    """Invalid run configuration."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def seed_for(master: int, *keys: int) -> int:
    """Deterministic 63-bit seed derived from the master seed and integer keys."""
    ss = np.random.SeedSequence([int(master)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class RunConfig:
    """Validated configuration; ``raw`` keeps the merged JSON document."""

    raw: dict
    schema: SchemaParams = field(repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = _merge(DEFAULTS, d)
        if raw["experiment"] not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        lat = raw["lattice"]
        if lat["law"] not in LAWS:
            raise ConfigError(f"unknown conductance law {lat['law']!r}")
        try:
            LatticeWindow(int(lat["d"]), int(lat["L"]), lat["boundary"])
        except ValueError as e:
            raise ConfigError(f"lattice: {e}") from None
        if lat["law"] != "constant" and not float(lat["cm"]) > 1:
            raise ConfigError(f"lattice: C_M must be > 1, got {lat['cm']}")
        sch = dict(raw["schema"])
        preset = sch.pop("preset", None)
        sch.setdefault("d", int(lat["d"]))
        try:
            if preset == "desk":
                schema = desk_schema(**sch)
            elif preset == "strict":
                schema = strict_schema(**sch)
            elif preset is None:
                schema = SchemaParams.from_dict(sch)
            else:
                raise ConfigError(f"unknown schema preset {preset!r}")
        except SchemaError as e:
            raise ConfigError(f"schema rejected: {e}") from None
        except TypeError as e:
            raise ConfigError(f"schema: {e}") from None
        if schema.d != int(lat["d"]):
            raise ConfigError("schema dimension differs from the lattice dimension")
        if int(raw["n_seeds"]) < 1:
            raise ConfigError("n_seeds must be >= 1")
        if not 0 < float(raw["alpha"]) < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if raw["policy"] not in ("treat-open", "treat-closed"):
            raise ConfigError("policy must be 'treat-open' or 'treat-closed'")
        from ..events import event_names
        if raw["event"]["name"] not in event_names():
            raise ConfigError(f"unknown event {raw['event']['name']!r}; known: {event_names()}")
        t = raw["tail"]
        if not 0 <= float(t["p_bad"]) <= 1:
            raise ConfigError("tail.p_bad must lie in [0, 1]")
        if int(t["r_max"]) < int(t["r_min"]):
            raise ConfigError("tail.r_max must be >= tail.r_min")
        return cls(raw, schema)

    @property
    def n_seeds(self) -> int:
        return int(self.raw["n_seeds"])

    @property
    def master_seed(self) -> int:
        return int(self.raw["master_seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    def section(self, name: str) -> dict:
        return self.raw[name]

    def realization_seed(self, s: int, stream: int = 0) -> int:
        return seed_for(self.master_seed, s, stream)

    def conductances(self, s: int = 0):
        lat = self.raw["lattice"]
        seed = lat["seed"] if lat["seed"] is not None else self.realization_seed(s, 1)
        return sample_conductances(LatticeWindow(int(lat["d"]), int(lat["L"]), lat["boundary"]),
                                   float(lat["cm"]), lat["law"], int(seed))

    def with_(self, **over) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.raw, over))

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file (or the defaults) and apply ``overrides``."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    if overrides:
        d = _merge(d, overrides)
    return RunConfig.from_dict(d)
