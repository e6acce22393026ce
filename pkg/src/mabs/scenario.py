"""Random experiment instances, the fixed-array and grid-search baselines,
and seeded Monte-Carlo trial runners."""
from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .channel import UserChannelSpec, channel_tensor
from .inner import InnerSolution, bcd_solve_batch, bcd_solve_channels
from .pso import PsoParams, pso_solve, violation_counts, violation_set

logger = logging.getLogger(__name__)

__all__ = [
    "ScenarioConfig",
    "ScenarioInstance",
    "SchemeKind",
    "TrialResult",
    "dbm_to_watts",
    "watts_to_dbm",
    "db_to_linear",
    "linear_to_db",
    "generate_scenario",
    "fpa_apv",
    "aps_grid",
    "aps_solve",
    "trial_seed",
    "run_trial",
    "monte_carlo",
    "summarize",
    "instance_to_dict",
    "instance_from_dict",
    "save_instance",
    "load_instance",
]


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical setup of one experiment. Defaults follow the reference setup:
    12 users, 16 antennas in a 3-wavelength square, 10 dBm per user,
    -80 dBm noise, -40 dB reference path loss with exponent 2.8."""

    num_users: int = 12
    num_antennas: int = 16
    paths_per_user: int = 10
    wavelength: float = 0.1
    region_size: float = 0.3
    min_dist: float = 0.05
    p_max: float = 0.01
    noise_power: float = 1e-11
    pathloss_ref: float = 1e-4
    pathloss_exp: float = 2.8
    distance_range: tuple = (20.0, 100.0)
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distance_range", tuple(float(d) for d in self.distance_range))
        for name in ("num_users", "num_antennas", "paths_per_user"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_users > self.num_antennas:
            raise ValueError(
                f"num_users ({self.num_users}) must not exceed num_antennas "
                f"({self.num_antennas}): K <= M"
            )
        for name in ("wavelength", "region_size", "min_dist", "p_max", "noise_power",
                     "pathloss_ref", "pathloss_exp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.distance_range
        if len(self.distance_range) != 2 or not 0 < lo <= hi:
            raise ValueError("distance_range must be [d_lo, d_hi] with 0 < d_lo <= d_hi")

    @property
    def half_width(self) -> float:
        return self.region_size / 2


@dataclass(frozen=True)
class ScenarioInstance:
    config: ScenarioConfig
    users: tuple

    @property
    def distances(self) -> np.ndarray:
        return np.array([u.distance for u in self.users])

    def channel(self, apv) -> np.ndarray:
        return channel_tensor(apv, self.users, self.config.wavelength)


class SchemeKind(str, enum.Enum):
    MOVABLE_OPTIMIZED = "MA"
    FIXED_UPA = "FPA"
    ALTERNATING_POSITION_SELECTION = "APS"

    @classmethod
    def parse(cls, value) -> "SchemeKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        for kind in cls:
            if key.upper() in (kind.value, kind.name):
                return kind
        aliases = {"MOVABLEOPTIMIZED": cls.MOVABLE_OPTIMIZED, "FIXEDUPA": cls.FIXED_UPA,
                   "ALTERNATINGPOSITIONSELECTION": cls.ALTERNATING_POSITION_SELECTION}
        try:
            return aliases[key.replace("_", "").upper()]
        except KeyError:
            raise ValueError(f"unknown scheme {value!r}; expected one of MA, FPA, APS") from None


@dataclass
class TrialResult:
    scheme: SchemeKind
    min_rate: float
    apv: np.ndarray
    inner: InnerSolution
    seed: int
    wall_time: float
    sweep_value: Optional[int] = None
    penalty_count: int = 0
    trace: Optional[dict] = None
    error: Optional[str] = None


def generate_scenario(config: ScenarioConfig, seed: Optional[int] = None) -> ScenarioInstance:
    """Draw distances, arrival angles and path gains for every user.

    Distances are uniform on ``distance_range``, angles uniform on
    [-pi/2, pi/2], and path gains circularly-symmetric complex Gaussian with
    variance ``pathloss_ref * d_k**-pathloss_exp / L``. Draws are made in
    that order and do not depend on the number of antennas, so configs that
    differ only in ``num_antennas`` share the same channel.
    """
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    K, L = config.num_users, config.paths_per_user
    d = rng.uniform(*config.distance_range, size=K)
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=(K, L))
    phi = rng.uniform(-np.pi / 2, np.pi / 2, size=(K, L))
    var = config.pathloss_ref * d ** (-config.pathloss_exp) / L
    std = np.sqrt(var / 2)[:, None]
    g = std * (rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L)))
    users = tuple(UserChannelSpec(theta[k], phi[k], g[k], float(d[k])) for k in range(K))
    return ScenarioInstance(config, users)


def _most_square(M: int) -> tuple:
    rows = max(r for r in range(1, math.isqrt(M) + 1) if M % r == 0)
    return rows, M // rows


def _centered_line(n: int, spacing: float) -> np.ndarray:
    return (np.arange(n) - (n - 1) / 2) * spacing


def fpa_apv(config: ScenarioConfig) -> np.ndarray:
    """Half-wavelength uniform planar array centred on the origin.

    Uses the most-square ``rows x cols`` factorisation of ``M`` (rows the
    largest divisor <= sqrt(M)), filled row-major. Returns an (M, 2) array.
    """
    rows, cols = _most_square(config.num_antennas)
    step = config.wavelength / 2
    xs = _centered_line(cols, step)
    ys = _centered_line(rows, step)
    if max(abs(xs[0]), abs(ys[0])) > config.half_width * (1 + 1e-12):
        raise ValueError(
            f"a {rows}x{cols} half-wavelength array does not fit in a "
            f"{config.region_size} m region"
        )
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def aps_grid(config: ScenarioConfig) -> np.ndarray:
    """Half-wavelength lattice over the region, aligned with the FPA array.

    Per axis the lattice is shifted so the FPA coordinates are lattice
    points, then extended as far as the region allows. Returns (G, 2).
    """
    rows, cols = _most_square(config.num_antennas)
    step = config.wavelength / 2
    half = config.half_width * (1 + 1e-12)

    def axis(n):
        offset = 0.0 if n % 2 else step / 2
        lo = math.ceil((-half - offset) / step - 1e-9)
        hi = math.floor((half - offset) / step + 1e-9)
        return offset + step * np.arange(lo, hi + 1)

    xs, ys = axis(cols), axis(rows)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def aps_solve(scenario: ScenarioInstance, xi: float = 1e-3, eps: float = 1e-3,
              max_sweeps: int = 5, max_bcd_iters: int = 50):
    """Greedy one-antenna-at-a-time relocation over the half-wavelength grid.

    Starts from the FPA placement. For antenna m = 1..M in turn, every free
    grid point keeping the minimum spacing to the other antennas is scored
    with the BCD solver and the antenna moves to the best one if that strictly
    raises the min rate. Sweeps repeat until one makes no move, at most
    ``max_sweeps`` times.

    Returns ``(apv, inner_solution, rate_history)`` where ``rate_history``
    lists the min rate after initialisation and after every accepted move.
    """
    cfg = scenario.config
    grid = aps_grid(cfg)
    if grid.shape[0] < cfg.num_antennas:
        raise ValueError("grid has fewer points than antennas")
    apv = fpa_apv(cfg)

    def solve(batch):
        H = channel_tensor(batch, scenario.users, cfg.wavelength)
        return bcd_solve_batch(H, cfg.p_max, cfg.noise_power, xi, eps, max_bcd_iters)

    current = solve(apv[None]).item(0)
    history = [current.min_rate]
    limit = cfg.min_dist * (1 - 1e-9)
    for _ in range(max_sweeps):
        moved = False
        for m in range(cfg.num_antennas):
            others = np.delete(apv, m, axis=0)
            dist = np.linalg.norm(grid[:, None, :] - others[None, :, :], axis=-1)
            free = np.all(dist >= limit, axis=1)
            # the antenna's own spot is the incumbent, not a candidate
            free &= np.linalg.norm(grid - apv[m], axis=-1) > 1e-12
            cand = grid[free]
            if cand.shape[0] == 0:
                continue
            batch = np.repeat(apv[None], cand.shape[0], axis=0)
            batch[:, m] = cand
            sol = solve(batch)
            j = int(np.argmax(sol.min_rate))
            if sol.min_rate[j] > current.min_rate:
                apv = batch[j]
                current = sol.item(j)
                history.append(current.min_rate)
                moved = True
        if not moved:
            break
    return apv, current, history


def trial_seed(root_seed: int, index: int) -> int:
    """64-bit seed of trial ``index``; independent of how many trials run."""
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _solver_seed(seed: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(1,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_trial(config: ScenarioConfig, scheme, pso_params: PsoParams, seed: Optional[int] = None,
              sweep_value: Optional[int] = None, keep_trace: bool = False) -> TrialResult:
    """Generate the scenario for ``seed`` and solve it with one scheme.

    Every scheme sees the same instance for the same seed. The swarm gets its
    own seed derived from the trial seed.
    """
    scheme = SchemeKind.parse(scheme)
    seed = config.rng_seed if seed is None else int(seed)
    t0 = time.perf_counter()
    scenario = generate_scenario(config, seed)
    trace = None
    if scheme is SchemeKind.MOVABLE_OPTIMIZED:
        params = replace(pso_params, rng_seed=_solver_seed(seed))
        res = pso_solve(scenario, params)
        apv, inner, penalty = res.apv, res.inner, res.penalty.count
        if keep_trace:
            trace = {"gbest_fitness": list(res.state.fitness_trace),
                     "penalty_count": list(res.state.penalty_trace)}
    elif scheme is SchemeKind.FIXED_UPA:
        apv = fpa_apv(config)
        inner = bcd_solve_channels(scenario.channel(apv), config.p_max, config.noise_power,
                                   pso_params.rate_tol, pso_params.bisect_tol,
                                   pso_params.max_bcd_iters)
        penalty = violation_set(apv, config.min_dist).count
    else:
        apv, inner, history = aps_solve(scenario, pso_params.rate_tol, pso_params.bisect_tol,
                                        max_bcd_iters=pso_params.max_bcd_iters)
        penalty = int(violation_counts(apv, config.min_dist))
        if keep_trace:
            trace = {"min_rate": history}
    return TrialResult(scheme, float(inner.min_rate), np.asarray(apv), inner, seed,
                       time.perf_counter() - t0, sweep_value, int(penalty), trace)


def _sweep_config(config: ScenarioConfig, sweep_param: Optional[str], value) -> ScenarioConfig:
    if sweep_param is None:
        return config
    if sweep_param not in ("num_antennas", "paths_per_user", "num_users"):
        raise ValueError(f"cannot sweep over {sweep_param!r}")
    return replace(config, **{sweep_param: int(value)})


def monte_carlo(config: ScenarioConfig, schemes: Sequence, pso_params: PsoParams,
                num_trials: int, sweep_param: Optional[str] = None,
                sweep_values: Optional[Iterable[int]] = None, keep_trace: bool = False,
                progress=None) -> list:
    """Run ``num_trials`` paired trials per scheme and sweep point.

    Trial ``i`` uses ``trial_seed(config.rng_seed, i)`` for every scheme and
    every sweep value. A failing trial is recorded with ``error`` set and a
    NaN rate instead of aborting the run. Results are ordered by sweep value,
    trial index, then scheme.
    """
    if num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    schemes = [SchemeKind.parse(s) for s in schemes]
    points = [None] if sweep_param is None else list(sweep_values or [])
    if sweep_param is not None and not points:
        raise ValueError("sweep needs at least one value")
    results = []
    for value in points:
        cfg = _sweep_config(config, sweep_param, value)
        for i in range(num_trials):
            seed = trial_seed(config.rng_seed, i)
            for scheme in schemes:
                try:
                    res = run_trial(cfg, scheme, pso_params, seed, value, keep_trace)
                except Exception as exc:  # recorded, not fatal
                    logger.exception("trial %d (%s, sweep=%s) failed", i, scheme.value, value)
                    res = TrialResult(scheme, float("nan"), np.empty((0, 2)), None, seed, 0.0,
                                      value, 0, None, f"{type(exc).__name__}: {exc}")
                results.append(res)
                if progress is not None:
                    progress(res)
    return results


def summarize(results: Sequence[TrialResult]) -> dict:
    """Mean and standard error of the min rate per (scheme, sweep value)."""
    groups = {}
    for r in results:
        if r.error is None:
            groups.setdefault((r.scheme.value, r.sweep_value), []).append(r.min_rate)
    out = {}
    for key, rates in groups.items():
        rates = np.asarray(rates)
        sem = float(rates.std(ddof=1) / np.sqrt(rates.size)) if rates.size > 1 else 0.0
        out[key] = {"mean": float(rates.mean()), "sem": sem, "n": int(rates.size)}
    return out


def _complex_pairs(z) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(z)]


def instance_to_dict(scenario: ScenarioInstance) -> dict:
    """JSON-ready form of an instance; floats round-trip exactly."""
    cfg = asdict(scenario.config)
    cfg["distance_range"] = list(cfg["distance_range"])
    return {
        "config": cfg,
        "users": [
            {
                "distance": float(u.distance),
                "elevation_aoas": [float(a) for a in u.elevation_aoas],
                "azimuth_aoas": [float(a) for a in u.azimuth_aoas],
                "path_response": _complex_pairs(u.path_response),
            }
            for u in scenario.users
        ],
    }


def instance_from_dict(data: dict) -> ScenarioInstance:
    cfg = ScenarioConfig(**data["config"])
    users = []
    for u in data["users"]:
        g = np.array([complex(re, im) for re, im in u["path_response"]])
        users.append(UserChannelSpec(np.array(u["elevation_aoas"]), np.array(u["azimuth_aoas"]),
                                     g, float(u["distance"])))
    return ScenarioInstance(cfg, tuple(users))


def save_instance(scenario: ScenarioInstance, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(instance_to_dict(scenario), fh, indent=1)
        fh.write("\n")


def load_instance(path) -> ScenarioInstance:
    with open(path, encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))
