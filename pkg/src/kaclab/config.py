"""Experiment configuration: TOML (or JSON) parsing, validation, hashing.

Unknown keys are hard errors: a silently ignored typo in a rate name would
invalidate an entire experiment, so the schema is closed.  The config hash
covers the effective configuration (after any CLI seed override) so output
files are traceable to exactly what ran.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from .measures import Measure1D
from .model import ModelParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration data."""


INITIAL_KINDS = ("gaussian", "two_point", "uniform", "file")


@dataclass(frozen=True)
class InitialSpec:
    """Initial-condition menu entry; exactly the fields for ``kind`` are set."""

    kind: str
    variance: float = math.nan
    level: float = math.nan
    low: float = math.nan
    high: float = math.nan
    path: str = ""


@dataclass(frozen=True)
class SolverSpec:
    """Spectral-solver knobs; ``None`` means the library default."""

    v_max: float | None = None
    n_velocity: int | None = None
    n_theta: int = 64
    dt: float | None = None
    out_step: float = 0.05
    upsample: int = 16
    mollify_cells: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    n_particles: int
    t_end: float
    sample_times: tuple
    replicas: int
    seed: int
    initial: InitialSpec
    solver: SolverSpec
    n_list: tuple
    k_list: tuple
    moment_order: float


_DEFAULTS = {
    "model": {"lambda": 1.0, "mu": 1.0, "temperature": 1.0},
    "run": {
        "n_particles": 10000,
        "t_end": 6.0,
        "sample_times": [0.5, 1.0, 2.0, 4.0, 6.0],
        "replicas": 20,
        "seed": 12345,
    },
    "initial": {"kind": "two_point", "level": math.sqrt(2.0)},
    "solver": {
        "v_max": None,
        "n_velocity": None,
        "n_theta": 64,
        "dt": None,
        "out_step": 0.05,
        "upsample": 16,
        "mollify_cells": 2.0,
    },
    "experiment": {"n_list": [], "k_list": [], "moment_order": 4.0},
}

_INITIAL_FIELDS = {
    "gaussian": {"variance"},
    "two_point": {"level"},
    "uniform": {"low", "high"},
    "file": {"path"},
}


def _check_keys(section: str, data: dict, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )


def _coerce_times(raw, section: str):
    try:
        times = tuple(float(t) for t in raw)
    except TypeError:
        raise ConfigError(f"[{section}] sample_times must be a list of numbers")
    if any(t < 0 for t in times) or list(times) != sorted(times):
        raise ConfigError("sample_times must be nonnegative and increasing")
    return times


def parse_config(data: dict, seed_override: int | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a table/object")
    _check_keys("top level", data, _DEFAULTS)
    merged = {}
    for section, defaults in _DEFAULTS.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{section}] must be a table/object")
        if section == "initial" and "kind" in raw:
            kind = raw["kind"]
            if kind not in INITIAL_KINDS:
                raise ConfigError(
                    f"initial kind {kind!r} not one of {INITIAL_KINDS}"
                )
            allowed = {"kind"} | _INITIAL_FIELDS[kind]
            _check_keys(section, raw, allowed)
            missing = _INITIAL_FIELDS[kind] - set(raw)
            if missing:
                raise ConfigError(
                    f"[initial] kind {kind!r} requires {sorted(missing)}"
                )
            merged[section] = dict(raw)
            continue
        _check_keys(section, raw, defaults)
        merged[section] = {**defaults, **raw}

    model = merged["model"]
    run = merged["run"]
    try:
        params = ModelParams(
            float(model["lambda"]), float(model["mu"]), float(model["temperature"])
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    seed = int(run["seed"]) if seed_override is None else int(seed_override)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must fit in 64 bits, got {seed}")
    replicas = int(run["replicas"])
    if replicas < 1:
        raise ConfigError("replicas must be at least 1")
    n_particles = int(run["n_particles"])
    if n_particles < 2:
        raise ConfigError("n_particles must be at least 2")
    t_end = float(run["t_end"])
    if not t_end >= 0:
        raise ConfigError("t_end must be nonnegative")
    sample_times = _coerce_times(run["sample_times"], "run")
    if sample_times and sample_times[-1] > t_end:
        raise ConfigError("sample_times must not exceed t_end")

    ini = merged["initial"]
    kind = ini["kind"]
    spec_kwargs = {k: ini[k] for k in _INITIAL_FIELDS[kind]}
    if kind == "gaussian" and not float(ini["variance"]) > 0:
        raise ConfigError("gaussian variance must be positive")
    if kind == "two_point" and not float(ini["level"]) > 0:
        raise ConfigError("two_point level must be positive")
    if kind == "uniform" and not float(ini["high"]) > float(ini["low"]):
        raise ConfigError("uniform bounds need high > low")
    initial = InitialSpec(kind=kind, **spec_kwargs)

    sv = merged["solver"]
    solver = SolverSpec(
        v_max=None if sv["v_max"] is None else float(sv["v_max"]),
        n_velocity=None if sv["n_velocity"] is None else int(sv["n_velocity"]),
        n_theta=int(sv["n_theta"]),
        dt=None if sv["dt"] is None else float(sv["dt"]),
        out_step=float(sv["out_step"]),
        upsample=int(sv["upsample"]),
        mollify_cells=float(sv["mollify_cells"]),
    )
    if solver.dt is not None and not solver.dt > 0:
        raise ConfigError("solver dt must be positive")

    exp = merged["experiment"]
    n_list = tuple(int(n) for n in exp["n_list"])
    k_list = tuple(int(k) for k in exp["k_list"])
    if any(n < 2 for n in n_list):
        raise ConfigError("n_list entries must be at least 2")
    if any(k < 1 for k in k_list):
        raise ConfigError("k_list entries must be at least 1")
    moment_order = float(exp["moment_order"])

    return ExperimentConfig(
        params=params,
        n_particles=n_particles,
        t_end=t_end,
        sample_times=sample_times,
        replicas=replicas,
        seed=seed,
        initial=initial,
        solver=solver,
        n_list=n_list,
        k_list=k_list,
        moment_order=moment_order,
    )


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    """Read TOML (default) or JSON (by .json extension) and validate."""
    try:
        if str(path).endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}")
    return parse_config(data, seed_override)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical serializable form; parse_config(config_to_dict(c)) == c."""
    ini = {"kind": cfg.initial.kind}
    for name in _INITIAL_FIELDS[cfg.initial.kind]:
        ini[name] = getattr(cfg.initial, name)
    out = {
        "model": {
            "lambda": cfg.params.lam,
            "mu": cfg.params.mu,
            "temperature": cfg.params.temperature,
        },
        "run": {
            "n_particles": cfg.n_particles,
            "t_end": cfg.t_end,
            "sample_times": list(cfg.sample_times),
            "replicas": cfg.replicas,
            "seed": cfg.seed,
        },
        "initial": ini,
        "solver": {
            "n_theta": cfg.solver.n_theta,
            "out_step": cfg.solver.out_step,
            "upsample": cfg.solver.upsample,
            "mollify_cells": cfg.solver.mollify_cells,
        },
        "experiment": {
            "n_list": list(cfg.n_list),
            "k_list": list(cfg.k_list),
            "moment_order": cfg.moment_order,
        },
    }
    # optional solver fields omitted when defaulted (TOML has no null)
    if cfg.solver.v_max is not None:
        out["solver"]["v_max"] = cfg.solver.v_max
    if cfg.solver.n_velocity is not None:
        out["solver"]["n_velocity"] = cfg.solver.n_velocity
    if cfg.solver.dt is not None:
        out["solver"]["dt"] = cfg.solver.dt
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# -- initial-condition realizations ----------------------------------------

def initial_measure(cfg: ExperimentConfig) -> Measure1D:
    """The initial law f0 as a Measure1D (atoms for discrete kinds)."""
    ini = cfg.initial
    if ini.kind == "gaussian":
        return Measure1D.gaussian(ini.variance)
    if ini.kind == "two_point":
        return Measure1D.two_point(ini.level)
    if ini.kind == "uniform":
        return Measure1D.uniform(ini.low, ini.high)
    values = _file_values(ini.path)
    return Measure1D.from_samples(values)


def initial_energy(cfg: ExperimentConfig) -> float:
    """Exact second moment of the initial law (analytic for menu kinds)."""
    ini = cfg.initial
    if ini.kind == "gaussian":
        return ini.variance
    if ini.kind == "two_point":
        return ini.level ** 2
    if ini.kind == "uniform":
        return (ini.low ** 2 + ini.low * ini.high + ini.high ** 2) / 3.0
    values = _file_values(ini.path)
    return float(np.mean(values ** 2))


def sample_initial(cfg: ExperimentConfig, n: int, rng) -> np.ndarray:
    """n i.i.d. velocities from the initial law."""
    ini = cfg.initial
    if ini.kind == "gaussian":
        return rng.standard_normal(n) * math.sqrt(ini.variance)
    if ini.kind == "two_point":
        return ini.level * np.where(rng.random(n) < 0.5, -1.0, 1.0)
    if ini.kind == "uniform":
        return rng.uniform(ini.low, ini.high, n)
    values = _file_values(ini.path)
    return rng.choice(values, size=n, replace=True)


def _file_values(path: str) -> np.ndarray:
    raw = np.genfromtxt(path, delimiter=",", names=True)
    if raw.dtype.names is None or "v" not in raw.dtype.names:
        raise ConfigError(f"{path}: expected a CSV with header 'v'")
    return np.atleast_1d(raw["v"]).astype(float)
