"""YAML run configuration with strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fem import MaterialParams
from .forward import NoiseModel, snr_to_delta
from .inverse import SolverConfig
from .mesh import PhantomSpec

METHODS = ("proposed", "baseline-tv", "baseline-ws", "nodal")

# Per-method regularization weights; the proposed fidelity is whitened so
# its scale does not track the force units like the baselines' does.
DEFAULT_LAMBDA = {"proposed": 100.0, "baseline-tv": 1e-2, "baseline-ws": 1e-4}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    deltas: tuple[float, ...] = (0.001, 0.01, 0.02, 0.056, 0.1, 0.2)
    seeds: tuple[int, ...] = (0, 1, 2)
    methods: tuple[str, ...] = ("proposed", "baseline-tv", "baseline-ws")
    lambda_grid: dict = field(default_factory=lambda: {"baseline-tv": [1e-4, 1e-2, 1.0],
                                                       "baseline-ws": [1e-6, 1e-4, 1e-2]})
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        for d in self.deltas:
            if not 0 <= d <= 1:
                raise ConfigError(f"sweep delta {d} outside [0, 1]")
        for m in self.methods:
            if m not in METHODS or m == "nodal":
                raise ConfigError(f"unknown sweep method {m!r}")
        for m, grid in self.lambda_grid.items():
            if m not in METHODS:
                raise ConfigError(f"lambda_grid names unknown method {m!r}")
            if not grid or any(float(v) < 0 for v in grid):
                raise ConfigError(f"lambda_grid[{m!r}] must be a non-empty list of non-negative values")


@dataclass(frozen=True)
class RunConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    material: MaterialParams = field(default_factory=MaterialParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    method: str = "proposed"
    lambda_reg: dict = field(default_factory=lambda: dict(DEFAULT_LAMBDA))
    load_amplitude: float = 1.0
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False)

    def lambda_for(self, method: str) -> float:
        return float(self.lambda_reg.get(method, DEFAULT_LAMBDA.get(method, 0.0)))

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {"phantom": PhantomSpec, "material": MaterialParams, "noise": NoiseModel,
             "solver": SolverConfig, "sweep": SweepConfig}
_TOP = set(_SECTIONS) | {"method", "lambda_reg", "load_amplitude", "seed"}


def _init_fields(cls):
    return {f.name for f in dataclasses.fields(cls) if f.init}


def _build(cls, name, values, extra=()):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section [{name}] must be a mapping")
    allowed = _init_fields(cls) | set(extra)
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) and k != "lambda_grid" else v)
              for k, v in values.items() if k not in extra}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}]: {exc}") from exc


def config_from_dict(data: dict | None, seed: int | None = None) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if seed is not None:
        data["seed"] = int(seed)
    noise = dict(data.get("noise") or {})
    if "snr_db" in noise:
        if noise.get("delta") not in (None, 0, 0.0):
            raise ConfigError("give either noise.delta or noise.snr_db, not both")
        noise["delta"] = snr_to_delta(float(noise.pop("snr_db")))
    if "seed" not in noise:
        noise["seed"] = int(data.get("seed", 0))
    sections = {name: _build(cls, name, noise if name == "noise" else data.get(name))
                for name, cls in _SECTIONS.items()}
    method = data.get("method", "proposed")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    lam = dict(DEFAULT_LAMBDA)
    user_lam = data.get("lambda_reg") or {}
    if not isinstance(user_lam, dict):
        raise ConfigError("lambda_reg must map method names to weights")
    for k, v in user_lam.items():
        if k not in METHODS:
            raise ConfigError(f"lambda_reg names unknown method {k!r}")
        if float(v) < 0:
            raise ConfigError("regularization weights must be non-negative")
        lam[k] = float(v)
    amp = float(data.get("load_amplitude", 1.0))
    if amp == 0:
        raise ConfigError("load_amplitude must be non-zero")
    return RunConfig(method=method, lambda_reg=lam, load_amplitude=amp,
                     seed=int(data.get("seed", 0)), raw=data, **sections)


def load_config(path, seed: int | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, seed)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data, seed)
