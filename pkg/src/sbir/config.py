"""Run configuration: TOML file of flat typed key-value tables.

Unknown tables or keys are rejected. Example::

    seed = 1
    out = "run"

    [prior]
    kind = "diagonal-gaussian"
    mean = [0.0, 0.0]
    std = [1.0, 1.0]

    [simulator]
    builtin = "identity-gaussian"
    noise_std = 0.5

    [observation]
    x = [1.0, -1.0]

    [algorithm]
    name = "snpe-c"
    rounds = 2
    simulations = 5000
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from sbir.distributions import Prior, prior_from_dict
from sbir.engines.inference import ALGORITHMS, InferenceConfig
from sbir.engines.training import TrainConfig
from sbir.harness import ExternalSimulator
from sbir.samplers import SamplerConfig
from sbir.tasks import BUILTINS, builtin_simulator


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


TOP_KEYS = {"seed", "out", "num_samples", "prior", "simulator", "observation", "algorithm", "training", "sampler"}
PRIOR_KEYS = {"kind", "dim", "low", "high", "mean", "std", "cov", "names"}
SIM_KEYS = {"builtin", "command", "workers", "timeout", "noise_std"}
BUILTIN_PARAMS = {"identity": set(), "two-moons": set(), "identity-gaussian": {"noise_std"}, "nan-below-zero": {"noise_std"}}
OBS_KEYS = {"x", "file"}
ALGO_KEYS = {
    "name", "rounds", "simulations", "atoms", "contrastive", "estimator", "hidden",
    "n_flows", "n_components", "embedding_dim", "embedding_hidden", "accept_quantile",
}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
SAMPLER_KEYS = {f.name for f in dataclasses.fields(SamplerConfig)}


@dataclass
class RunConfig:
    seed: int
    prior: Prior
    prior_spec: dict[str, Any]
    names: list[str]
    simulator_spec: dict[str, Any]
    x_o: np.ndarray | None
    inference: InferenceConfig
    out: Path
    num_samples: int = 1000
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict[str, Any] = field(default_factory=dict)

    def make_simulator(self, workers: int | None = None):
        spec = dict(self.simulator_spec)
        n_workers = int(workers if workers is not None else spec.get("workers", 1))
        if "command" in spec:
            cmd = spec["command"]
            cmd = [cmd] if isinstance(cmd, str) else list(cmd)
            return ExternalSimulator(
                cmd, self.prior.dim, timeout=float(spec.get("timeout", 10.0)), workers=n_workers
            )
        params = {k: spec[k] for k in BUILTIN_PARAMS[spec["builtin"]] if k in spec}
        return builtin_simulator(spec["builtin"], self.prior.dim, n_workers, **params)


def _check_keys(block: dict, allowed: set, where: str) -> None:
    for k in block:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}" if where else k, "unknown key")


def _table(raw: dict, name: str, required: bool = False) -> dict:
    block = raw.get(name, {})
    if required and name not in raw:
        raise ConfigError(name, "missing required table")
    if not isinstance(block, dict):
        raise ConfigError(name, "must be a table")
    return dict(block)


def read_observation(path: Path) -> np.ndarray:
    text = path.read_text(encoding="utf-8").strip()
    if text.startswith("[") or text.startswith("{"):
        obj = json.loads(text)
        if isinstance(obj, dict):
            obj = obj["x"]
        return np.asarray(obj, dtype=np.float64).reshape(-1)
    rows = [r for r in csv.reader(l for l in text.splitlines() if l.strip() and not l.startswith("#"))]
    try:
        vals = [float(v) for v in rows[-1]]
    except ValueError:
        raise ValueError(f"cannot parse observation file {path}")
    return np.asarray(vals)


def parse_config(raw: dict[str, Any], base_dir: Path | None = None) -> RunConfig:
    base_dir = Path(base_dir or Path.cwd())
    _check_keys(raw, TOP_KEYS, "")
    if "seed" not in raw:
        raise ConfigError("seed", "a seed is mandatory")
    if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool) or raw["seed"] < 0:
        raise ConfigError("seed", "must be a non-negative integer")

    prior_spec = _table(raw, "prior", required=True)
    _check_keys(prior_spec, PRIOR_KEYS, "prior")
    try:
        prior = prior_from_dict(prior_spec)
    except ValueError as exc:
        raise ConfigError("prior", str(exc)) from exc
    names = list(prior_spec.get("names", [f"theta_{i}" for i in range(prior.dim)]))
    if len(names) != prior.dim:
        raise ConfigError("prior.names", f"expected {prior.dim} names")

    sim = _table(raw, "simulator", required=True)
    _check_keys(sim, SIM_KEYS, "simulator")
    if ("builtin" in sim) == ("command" in sim):
        raise ConfigError("simulator", "set exactly one of 'builtin' or 'command'")
    if "builtin" in sim:
        if sim["builtin"] not in BUILTINS:
            raise ConfigError("simulator.builtin", f"unknown builtin {sim['builtin']!r}; available {sorted(BUILTINS)}")
        for k in sim:
            if k not in {"builtin", "workers"} | BUILTIN_PARAMS[sim["builtin"]]:
                raise ConfigError(f"simulator.{k}", f"not a parameter of builtin {sim['builtin']!r}")
    elif "noise_std" in sim:
        raise ConfigError("simulator.noise_std", "only applies to builtin simulators")

    obs = _table(raw, "observation")
    _check_keys(obs, OBS_KEYS, "observation")
    x_o = None
    if "x" in obs and "file" in obs:
        raise ConfigError("observation", "set either 'x' or 'file', not both")
    if "x" in obs:
        x_o = np.asarray(obs["x"], dtype=np.float64).reshape(-1)
    elif "file" in obs:
        path = base_dir / obs["file"]
        if not path.exists():
            raise ConfigError("observation.file", f"file not found: {path}")
        try:
            x_o = read_observation(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError("observation.file", str(exc)) from exc

    algo = _table(raw, "algorithm")
    _check_keys(algo, ALGO_KEYS, "algorithm")
    name = algo.pop("name", "snpe-c")
    if name not in ALGORITHMS:
        raise ConfigError("algorithm.name", f"unknown algorithm {name!r}; choose from {list(ALGORITHMS)}")
    train = _table(raw, "training")
    _check_keys(train, TRAIN_KEYS, "training")
    sampler = _table(raw, "sampler")
    _check_keys(sampler, SAMPLER_KEYS, "sampler")
    try:
        train_cfg = TrainConfig(**train)
    except (TypeError, ValueError) as exc:
        raise ConfigError("training", str(exc)) from exc
    try:
        sampler_cfg = SamplerConfig(**sampler)
    except (TypeError, ValueError) as exc:
        raise ConfigError("sampler", str(exc)) from exc
    try:
        inference = InferenceConfig(algorithm=name, seed=raw["seed"], train=train_cfg, sampler=sampler_cfg, **algo)
    except (TypeError, ValueError) as exc:
        raise ConfigError("algorithm", str(exc)) from exc

    num_samples = raw.get("num_samples", 1000)
    if not isinstance(num_samples, int) or num_samples < 0:
        raise ConfigError("num_samples", "must be a non-negative integer")
    return RunConfig(
        seed=raw["seed"],
        prior=prior,
        prior_spec=prior_spec,
        names=names,
        simulator_spec=sim,
        x_o=x_o,
        inference=inference,
        out=base_dir / raw.get("out", "sbir-out"),
        num_samples=num_samples,
        base_dir=base_dir,
        raw=raw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, path.parent)
