"""Run configuration files.

A run config is a YAML mapping::

    experiment: rate_vs_antennas     # convergence | rate_vs_antennas | rate_vs_paths | single
    schemes: [MA, APS, FPA]
    sweep_values: [8, 12, 16]
    num_trials: 20
    output_dir: results
    record_timing: false
    scenario:
      num_users: 12                  # required
      num_antennas: 16               # required
      paths_per_user: 10
      wavelength: 0.1
      region_size: 0.3
      min_dist: 0.05
      p_max: 0.01                    # or p_max_dbm: 10
      noise_power: 1.0e-11           # or noise_power_dbm: -80
      pathloss_ref: 1.0e-4           # or pathloss_ref_db: -40
      pathloss_exp: 2.8
      distance_range: [20, 100]
      rng_seed: 0
    pso:
      swarm_size: 50
      max_iters: 100
      cognitive: 1.4
      social: 1.4
      inertia_start: 0.9
      inertia_end: 0.4
      penalty_weight: 10
      rate_tol: 1.0e-3
      bisect_tol: 1.0e-3
      per_component_draws: true
      sequential: false
      max_bcd_iters: 50

Unknown keys are errors. Swarm size, iteration count and trial count default
to the desk scale (50 / 100 / 20); everything else defaults to the reference
physical setup. A run manifest written by the CLI is also accepted.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .pso import PsoParams
from .scenario import ScenarioConfig, SchemeKind, db_to_linear, dbm_to_watts

EXPERIMENTS = ("convergence", "rate_vs_antennas", "rate_vs_paths", "single")
SWEEP_PARAM = {"rate_vs_antennas": "num_antennas", "rate_vs_paths": "paths_per_user"}

DESK_SCALE = {"swarm_size": 50, "max_iters": 100, "num_trials": 20}
PAPER_SCALE = {"swarm_size": 200, "max_iters": 300, "num_trials": 1000}

_REQUIRED_SCENARIO = ("num_users", "num_antennas")
_UNIT_ALIASES = {
    "p_max_dbm": ("p_max", dbm_to_watts),
    "noise_power_dbm": ("noise_power", dbm_to_watts),
    "pathloss_ref_db": ("pathloss_ref", db_to_linear),
}
_TOP_KEYS = {"experiment", "schemes", "sweep_values", "num_trials", "output_dir",
             "record_timing", "scenario", "pso"}


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    pso: PsoParams
    schemes: list = field(default_factory=lambda: [SchemeKind.MOVABLE_OPTIMIZED])
    experiment: str = "single"
    sweep_values: list = field(default_factory=list)
    num_trials: int = DESK_SCALE["num_trials"]
    output_dir: str = "results"
    # wall-clock times make result tables non-reproducible, so they are opt-in
    record_timing: bool = False

    @property
    def sweep_param(self) -> Optional[str]:
        return SWEEP_PARAM.get(self.experiment)

    def to_dict(self) -> dict:
        scen = dataclasses.asdict(self.scenario)
        scen["distance_range"] = list(scen["distance_range"])
        pso = dataclasses.asdict(self.pso)
        pso.pop("rng_seed")  # per-trial swarm seeds derive from the trial seed
        return {
            "experiment": self.experiment,
            "schemes": [s.value for s in self.schemes],
            "sweep_values": list(self.sweep_values),
            "num_trials": self.num_trials,
            "output_dir": str(self.output_dir),
            "record_timing": self.record_timing,
            "scenario": scen,
            "pso": pso,
        }


def _coerce_floats(raw: dict, cls, where: str) -> None:
    # YAML 1.1 reads "1e-11" (no dot) as a string
    for f in dataclasses.fields(cls):
        if f.name in raw and isinstance(f.default, float) and not isinstance(raw[f.name], bool):
            try:
                raw[f.name] = float(raw[f.name])
            except (TypeError, ValueError):
                raise ConfigError(f"{where}{f.name} must be a number, got {raw[f.name]!r}") from None


def _check_keys(section: dict, allowed, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}{key}")


def _scenario_from(raw: dict) -> ScenarioConfig:
    raw = dict(raw)
    fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    _check_keys(raw, fields | set(_UNIT_ALIASES), "scenario.")
    for key in _REQUIRED_SCENARIO:
        if key not in raw:
            raise ConfigError(f"missing required key scenario.{key}")
    for alias, (target, conv) in _UNIT_ALIASES.items():
        if alias in raw:
            if target in raw:
                raise ConfigError(f"scenario.{alias} and scenario.{target} are mutually exclusive")
            try:
                raw[target] = float(conv(float(raw.pop(alias))))
            except (TypeError, ValueError):
                raise ConfigError(f"scenario.{alias} must be a number") from None
    _coerce_floats(raw, ScenarioConfig, "scenario.")
    for key in ("num_users", "num_antennas", "paths_per_user", "rng_seed"):
        if key in raw and not isinstance(raw[key], int):
            raise ConfigError(f"scenario.{key} must be an integer")
    try:
        return ScenarioConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


def _pso_from(raw: dict) -> PsoParams:
    raw = dict(raw)
    fields = {f.name for f in dataclasses.fields(PsoParams)} - {"rng_seed"}
    _check_keys(raw, fields, "pso.")
    _coerce_floats(raw, PsoParams, "pso.")
    raw.setdefault("swarm_size", DESK_SCALE["swarm_size"])
    raw.setdefault("max_iters", DESK_SCALE["max_iters"])
    try:
        return PsoParams(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid pso parameters: {exc}") from None


def config_from_dict(data: Optional[dict]) -> RunConfig:
    """Validate a parsed mapping into a :class:`RunConfig`."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    if "manifest_version" in data:
        data = data.get("config") or {}
    _check_keys(data, _TOP_KEYS, "")
    scen_raw = data.get("scenario") or {}
    if not isinstance(scen_raw, dict):
        raise ConfigError("scenario must be a mapping")
    scenario = _scenario_from(scen_raw)
    pso = _pso_from(data.get("pso") or {})

    experiment = data.get("experiment", "single")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {experiment!r}")
    try:
        schemes = [SchemeKind.parse(s) for s in data.get("schemes", ["MA"])]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not schemes:
        raise ConfigError("schemes must not be empty")

    num_trials = data.get("num_trials", DESK_SCALE["num_trials"])
    if not isinstance(num_trials, int) or num_trials < 1:
        raise ConfigError("num_trials must be a positive integer")

    cfg = RunConfig(scenario, pso, schemes, experiment, list(data.get("sweep_values") or []),
                    num_trials, str(data.get("output_dir", "results")),
                    bool(data.get("record_timing", False)))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Re-check cross-field invariants (used again after CLI overrides)."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    if cfg.experiment == "convergence" and SchemeKind.MOVABLE_OPTIMIZED not in cfg.schemes:
        raise ConfigError("convergence experiment needs the MA scheme")
    param = cfg.sweep_param
    if param is None:
        return
    if not cfg.sweep_values:
        raise ConfigError(f"sweep_values must be non-empty for {cfg.experiment}")
    for v in cfg.sweep_values:
        if not isinstance(v, int):
            raise ConfigError("sweep_values must be integers")
        try:
            ScenarioConfig(**{**dataclasses.asdict(cfg.scenario), param: v})
        except ValueError as exc:
            raise ConfigError(f"sweep value {param}={v} is invalid: {exc}") from None


def parse_config(path) -> RunConfig:
    """Load and validate a YAML (or JSON manifest) run config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from None
    return config_from_dict(data)
