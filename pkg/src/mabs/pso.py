"""Particle swarm search over antenna placements.

Each particle is a flattened placement ``[x_1, y_1, ..., x_M, y_M]``. Its
fitness is the max-min rate from the inner BCD solver minus ``tau`` times
the number of antenna pairs closer than the minimum spacing. Positions are
clamped to the square region after every move.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import channel_tensor
from .inner import InnerSolution, bcd_solve_batch, bcd_solve_channels

logger = logging.getLogger(__name__)

__all__ = [
    "PsoParams",
    "Particle",
    "SwarmState",
    "PenaltyReport",
    "PsoResult",
    "init_swarm",
    "update_velocity",
    "update_position",
    "violation_set",
    "violation_counts",
    "penalized_fitness",
    "evaluate_positions",
    "effective_penalty_weight",
    "pso_solve",
]

# Pairs spaced exactly D apart (e.g. a lambda/2 lattice) must not be flagged
# because of the last bit of a coordinate difference.
DIST_RTOL = 1e-9


@dataclass(frozen=True)
class PsoParams:
    swarm_size: int = 200
    max_iters: int = 300
    cognitive: float = 1.4
    social: float = 1.4
    inertia_start: float = 0.9
    inertia_end: float = 0.4
    penalty_weight: float = 10.0
    rate_tol: float = 1e-3
    bisect_tol: float = 1e-3
    rng_seed: int = 0
    # draw the two attraction weights per component (True) or per particle
    per_component_draws: bool = True
    # update the global best inside the particle loop instead of per iteration
    sequential: bool = False
    max_bcd_iters: int = 50

    def __post_init__(self):
        if self.swarm_size < 1 or self.max_iters < 1:
            raise ValueError("swarm_size and max_iters must be >= 1")
        if self.cognitive < 0 or self.social < 0:
            raise ValueError("learning factors must be nonnegative")
        if self.penalty_weight <= 0:
            raise ValueError("penalty_weight must be positive")
        if not self.inertia_start >= self.inertia_end >= 0:
            raise ValueError("need inertia_start >= inertia_end >= 0")
        if self.rate_tol <= 0 or self.bisect_tol <= 0:
            raise ValueError("tolerances must be positive")

    def inertia(self, t: int) -> float:
        """Linearly decreasing inertia weight at update iteration ``t`` (0-based)."""
        if self.max_iters == 1:
            return self.inertia_start
        frac = t / (self.max_iters - 1)
        return self.inertia_start + (self.inertia_end - self.inertia_start) * frac


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float


@dataclass
class SwarmState:
    positions: np.ndarray  # (N, 2M)
    velocities: np.ndarray  # (N, 2M)
    best_positions: np.ndarray  # (N, 2M)
    best_fitness: np.ndarray  # (N,)
    global_best_position: np.ndarray  # (2M,)
    global_best_fitness: float
    half_width: float
    iteration: int = 0
    fitness_trace: list = field(default_factory=list)
    penalty_trace: list = field(default_factory=list)
    # inner solver hit its iteration cap while evaluating the global best
    global_best_converged: bool = True

    @property
    def particles(self) -> list:
        return [
            Particle(self.positions[n], self.velocities[n], self.best_positions[n],
                     float(self.best_fitness[n]))
            for n in range(self.positions.shape[0])
        ]


@dataclass(frozen=True)
class PenaltyReport:
    violating_pairs: frozenset
    count: int


@dataclass
class PsoResult:
    apv: np.ndarray  # (M, 2)
    inner: InnerSolution
    state: SwarmState
    penalty: PenaltyReport
    penalty_weight: float
    warnings: list = field(default_factory=list)

    @property
    def fitness(self) -> float:
        return self.state.global_best_fitness


def _positions(apv) -> np.ndarray:
    pos = np.asarray(apv, dtype=float)
    if pos.shape[-1] != 2 or pos.ndim == 1:
        pos = pos.reshape(pos.shape[:-1] + (-1, 2))
    return pos


def violation_set(apv, min_dist: float) -> PenaltyReport:
    """Antenna pairs ``(m, i)``, ``m < i``, closer than ``min_dist``."""
    pos = _positions(apv)
    M = pos.shape[0]
    limit = min_dist * (1 - DIST_RTOL)
    pairs = frozenset(
        (m, i)
        for m in range(M)
        for i in range(m + 1, M)
        if np.hypot(*(pos[m] - pos[i])) < limit
    )
    return PenaltyReport(pairs, len(pairs))


def violation_counts(positions, min_dist: float) -> np.ndarray:
    """Vectorised ``violation_set(...).count`` over a batch of placements."""
    pos = _positions(positions)
    M = pos.shape[-2]
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    iu = np.triu_indices(M, k=1)
    return np.sum(dist[..., iu[0], iu[1]] < min_dist * (1 - DIST_RTOL), axis=-1)


def effective_penalty_weight(scenario, params: PsoParams):
    """Penalty weight guaranteed to exceed any achievable max-min rate.

    A user's rate is at most ``log2(1 + p_max ||h_k||^2 / sigma^2)`` and
    ``||h_k||^2 <= M (sum_l |g_kl|)^2`` for every placement, so the minimum of
    these single-user bounds caps the max-min rate. If the configured weight
    does not clear it, the weight is raised to bound + 1.

    Returns ``(tau, warning_message_or_None)``.
    """
    cfg = scenario.config
    gain = np.array([np.sum(np.abs(u.path_response)) ** 2 for u in scenario.users])
    bound = float(np.min(np.log2(1 + cfg.p_max * cfg.num_antennas * gain / cfg.noise_power)))
    tau = params.penalty_weight
    if bound <= tau:
        return tau, None
    msg = (f"penalty weight {tau:g} below the rate bound {bound:.3f}; "
           f"raised to {bound + 1:.3f}")
    logger.warning(msg)
    return bound + 1, msg


def evaluate_positions(positions, scenario, params: PsoParams, tau: float):
    """Penalised fitness of a batch of flattened placements.

    Returns ``(fitness, rate, penalty_count, converged)`` arrays of shape (B,).
    """
    cfg = scenario.config
    pos = np.asarray(positions, dtype=float).reshape(-1, cfg.num_antennas, 2)
    H = channel_tensor(pos, scenario.users, cfg.wavelength)
    sol = bcd_solve_batch(H, cfg.p_max, cfg.noise_power, params.rate_tol, params.bisect_tol,
                          params.max_bcd_iters)
    counts = violation_counts(pos, cfg.min_dist)
    return sol.min_rate - tau * counts, sol.min_rate, counts, sol.converged


def penalized_fitness(apv, scenario, params: PsoParams, tau: Optional[float] = None) -> float:
    """``R(apv) - tau * |violating pairs|`` for one placement."""
    if tau is None:
        tau = params.penalty_weight
    flat = np.asarray(apv, dtype=float).reshape(1, -1)
    F, _, _, conv = evaluate_positions(flat, scenario, params, tau)
    if not conv[0]:
        logger.warning("inner solver did not converge for this placement")
    return float(F[0])


def update_velocity(position, velocity, best_position, global_best, omega: float,
                    c1: float, c2: float, rng, per_component: bool = True):
    """Inertia + cognitive + social velocity update.

    ``rng`` is either a numpy ``Generator`` or a callable ``shape -> array``
    returning uniform [0, 1] draws (used to script the weights in tests).
    Works on one particle or on a whole ``(N, D)`` swarm.
    """
    x = np.asarray(position, dtype=float)
    draw = rng.random if hasattr(rng, "random") else rng
    shape = x.shape if per_component else x.shape[:-1] + (1,)
    r1 = np.asarray(draw(shape), dtype=float)
    r2 = np.asarray(draw(shape), dtype=float)
    return (omega * np.asarray(velocity, dtype=float)
            + c1 * r1 * (np.asarray(best_position) - x)
            + c2 * r2 * (np.asarray(global_best) - x))


def update_position(position, velocity, half_width: float):
    """Move by ``velocity`` and clamp each coordinate to ``[-A/2, A/2]``."""
    return np.clip(np.asarray(position) + np.asarray(velocity), -half_width, half_width)


def init_swarm(params: PsoParams, num_antennas: int, region_size: float, rng=None,
               evaluate: Optional[Callable] = None) -> SwarmState:
    """Uniform random positions and velocities on ``[-A/2, A/2]^{2M}``.

    ``evaluate`` maps an ``(N, 2M)`` batch to fitness values; without it all
    fitness values start at ``-inf`` and the first particle is the global best.
    """
    if num_antennas < 1:
        raise ValueError("need at least one antenna")
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    half = region_size / 2
    shape = (params.swarm_size, 2 * num_antennas)
    x = rng.uniform(-half, half, shape)
    v = rng.uniform(-half, half, shape)
    fit = np.full(shape[0], -np.inf) if evaluate is None else np.asarray(evaluate(x), dtype=float)
    g = int(np.argmax(fit))  # first index wins ties
    return SwarmState(x, v, x.copy(), fit.copy(), x[g].copy(), float(fit[g]), half)


def pso_solve(scenario, params: PsoParams, callback: Optional[Callable] = None) -> PsoResult:
    """Optimise the antenna placement of ``scenario`` with a penalised swarm.

    After initialisation the swarm runs ``params.max_iters`` update iterations.
    By default all particles move, then all are evaluated, then personal and
    global bests are replaced (strict improvement only); with
    ``params.sequential`` the global best is refreshed after each particle.
    ``callback(state)`` is called after initialisation and every iteration.

    The returned placement may still violate the spacing constraint; check
    ``result.penalty.count``.
    """
    cfg = scenario.config
    M, D = cfg.num_antennas, cfg.min_dist
    tau, warn = effective_penalty_weight(scenario, params)
    rng = np.random.default_rng(params.rng_seed)

    def evaluate(batch):
        return evaluate_positions(batch, scenario, params, tau)[0]

    def record(state):
        state.fitness_trace.append(state.global_best_fitness)
        state.penalty_trace.append(int(violation_counts(state.global_best_position, D)))

    state = init_swarm(params, M, cfg.region_size, rng, evaluate)
    record(state)
    if callback is not None:
        callback(state)

    c1, c2, half = params.cognitive, params.social, state.half_width
    N = params.swarm_size
    for t in range(params.max_iters):
        omega = params.inertia(t)
        if params.sequential:
            for n in range(N):
                state.velocities[n] = update_velocity(
                    state.positions[n], state.velocities[n], state.best_positions[n],
                    state.global_best_position, omega, c1, c2, rng, params.per_component_draws)
                state.positions[n] = update_position(state.positions[n], state.velocities[n], half)
                F = evaluate(state.positions[n][None])
                if F[0] > state.best_fitness[n]:
                    state.best_fitness[n] = F[0]
                    state.best_positions[n] = state.positions[n]
                if F[0] > state.global_best_fitness:
                    state.global_best_fitness = float(F[0])
                    state.global_best_position = state.positions[n].copy()
        else:
            state.velocities = update_velocity(
                state.positions, state.velocities, state.best_positions,
                state.global_best_position, omega, c1, c2, rng, params.per_component_draws)
            state.positions = update_position(state.positions, state.velocities, half)
            F = evaluate(state.positions)
            improved = F > state.best_fitness
            state.best_fitness[improved] = F[improved]
            state.best_positions[improved] = state.positions[improved]
            n = int(np.argmax(F))
            if F[n] > state.global_best_fitness:
                state.global_best_fitness = float(F[n])
                state.global_best_position = state.positions[n].copy()
        state.iteration = t + 1
        record(state)
        if callback is not None:
            callback(state)

    apv = state.global_best_position.reshape(M, 2).copy()
    H = channel_tensor(apv, scenario.users, cfg.wavelength)
    inner = bcd_solve_channels(H, cfg.p_max, cfg.noise_power, params.rate_tol,
                               params.bisect_tol, params.max_bcd_iters)
    state.global_best_converged = inner.converged
    return PsoResult(apv, inner, state, violation_set(apv, D), tau, [warn] if warn else [])
