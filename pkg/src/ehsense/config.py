"""Experiment configuration: YAML schema, validation, sweep expansion.

One config file describes a model instance, solver and simulation settings,
optional sweep axes (`q` rebuilds the two-point harvest pmf, `tau` rescales
the sensing cost) and the policies to benchmark.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .model import ParameterError, SystemParams

KNOWN_POLICIES = ("optimal", "single_threshold", "greedy", "opportunistic")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass
class SimSettings:
    episodes: int = 30
    horizon: int = 100_000
    seed: int = 0
    initial_battery: int = 0
    initial_belief: float | None = None
    g0: float | None = None


@dataclass
class SearchSettings:
    episodes: int = 16
    horizon: int = 3000
    max_passes: int = 2
    seed: int | None = None          # defaults to the simulation seed
    candidates: list | None = None   # None = reachable beliefs + coarse mesh


@dataclass
class ExperimentConfig:
    model: SystemParams
    grid_resolution: int = 1001
    tol: float = 1e-9
    max_iter: int | None = None
    span_tol: float | None = None
    sim: SimSettings = field(default_factory=SimSettings)
    search: SearchSettings = field(default_factory=SearchSettings)
    policies: tuple = ("optimal", "greedy", "single_threshold", "opportunistic")
    sweep_q: tuple = ()
    sweep_tau: tuple = ()
    output_dir: str = "out"
    config_hash: str = ""

    def sweep_points(self):
        """(label, params) per sweep point; cartesian when both axes are set.

        Labels are stable file-name fragments like "q0.3" or "q0.3_tau0.2";
        a config without sweep axes yields one unlabeled point.
        """
        qs = self.sweep_q or (None,)
        taus = self.sweep_tau or (None,)
        points = []
        for q in qs:
            for tau in taus:
                params = self.model
                tags = []
                if q is not None:
                    params = params.with_harvest(float(q))
                    tags.append(f"q{q:g}")
                if tau is not None:
                    e_sense = float(tau) * params.e_tx
                    if abs(e_sense - round(e_sense)) > 1e-9:
                        raise ConfigError(
                            f"tau={tau} gives non-integral sensing cost "
                            f"{e_sense} at e_tx={params.e_tx}")
                    params = params.with_sense_cost(int(round(e_sense)))
                    tags.append(f"tau{tau:g}")
                points.append(("_".join(tags), params))
        return points


def _parse_pmf(raw) -> tuple:
    if isinstance(raw, dict):
        try:
            items = {int(k): float(v) for k, v in raw.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad energy_pmf mapping: {exc}") from None
        if min(items) < 0:
            raise ConfigError("energy_pmf arrival levels must be >= 0")
        pmf = [0.0] * (max(items) + 1)
        for m, p in items.items():
            pmf[m] = p
        return tuple(pmf)
    if isinstance(raw, (list, tuple)):
        return tuple(float(v) for v in raw)
    raise ConfigError("energy_pmf must be a list or an {arrival: prob} map")


def _section(data, name) -> dict:
    sect = data.get(name, {})
    if sect is None:
        sect = {}
    if not isinstance(sect, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sect


def parse_config(data: dict, seed_override: int | None = None) -> ExperimentConfig:
    if not isinstance(data, dict) or "model" not in data:
        raise ConfigError("config must be a mapping with a 'model' section")
    model_raw = dict(_section(data, "model"))
    if "energy_pmf" not in model_raw:
        raise ConfigError("model.energy_pmf is required")
    model_raw["energy_pmf"] = _parse_pmf(model_raw["energy_pmf"])
    try:
        model = SystemParams(**model_raw)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"invalid model: {exc}") from None

    grid = _section(data, "grid")
    solver = _section(data, "solver")
    sim_raw = _section(data, "simulation")
    search_raw = _section(data, "search")

    if seed_override is not None:
        sim_raw = dict(sim_raw, seed=int(seed_override))
    try:
        sim = SimSettings(**sim_raw)
        search = SearchSettings(**search_raw)
    except TypeError as exc:
        raise ConfigError(f"bad simulation/search settings: {exc}") from None
    if search.seed is None:
        search.seed = sim.seed
    if sim.episodes < 1 or sim.horizon < 1:
        raise ConfigError("simulation episodes and horizon must be >= 1")

    policies = tuple(data.get("policies",
                              ("optimal", "greedy", "single_threshold",
                               "opportunistic")))
    unknown = [p for p in policies if p not in KNOWN_POLICIES]
    if unknown:
        raise ConfigError(f"unknown policies {unknown}; valid: {KNOWN_POLICIES}")
    if not policies:
        raise ConfigError("policy list must not be empty")

    sweep = _section(data, "sweep")
    sweep_q = tuple(sweep.get("q", ()) or ())
    sweep_tau = tuple(sweep.get("tau", ()) or ())
    if "q" in sweep and not sweep_q:
        raise ConfigError("sweep.q must be a nonempty list when present")
    if "tau" in sweep and not sweep_tau:
        raise ConfigError("sweep.tau must be a nonempty list when present")

    effective = dict(data)
    effective["simulation"] = dict(sim_raw)
    digest = hashlib.sha256(
        json.dumps(effective, sort_keys=True, default=str).encode()).hexdigest()[:12]

    resolution = int(grid.get("resolution", 1001))
    if resolution < 2:
        raise ConfigError("grid.resolution must be >= 2")
    cfg = ExperimentConfig(
        model=model,
        grid_resolution=resolution,
        tol=float(solver.get("tol", 1e-9)),
        max_iter=(int(solver["max_iter"]) if solver.get("max_iter") is not None
                  else None),
        span_tol=(float(solver["span_tol"]) if solver.get("span_tol") is not None
                  else None),
        sim=sim,
        search=search,
        policies=policies,
        sweep_q=sweep_q,
        sweep_tau=sweep_tau,
        output_dir=str(data.get("output_dir", "out")),
        config_hash=digest,
    )
    if cfg.tol <= 0:
        raise ConfigError("solver.tol must be positive")
    # fail fast on sweep points that violate model invariants
    try:
        cfg.sweep_points()
    except ParameterError as exc:
        raise ConfigError(f"invalid sweep point: {exc}") from None
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return parse_config(data, seed_override=seed_override)
