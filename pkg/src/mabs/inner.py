"""Max-min rate for a fixed antenna placement.

For fixed transmit powers the MMSE receiver maximises every user's SINR at
once; for a fixed receiver the max-min SINR is reached when all SINRs are
equal, which turns power control into a bisection over the common SINR
target with a K x K linear solve per step. Alternating the two blocks gives
a non-decreasing min-rate sequence.

The core routines operate on arrays with arbitrary leading batch dimensions:
``H`` is ``(..., M, K)``, powers are ``(..., K)``. The per-item arithmetic is
the same whether an item is solved alone or inside a batch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelMatrix, channel_tensor

logger = logging.getLogger(__name__)

__all__ = [
    "NumericalError",
    "DegenerateCombinerError",
    "SinrCoefficients",
    "InnerSolution",
    "BatchInnerSolution",
    "sinr",
    "achievable_rate",
    "mmse_combiner",
    "sinr_coefficients",
    "sinrs_from_coefficients",
    "power_for_target_sinr",
    "bisection_max_min_sinr",
    "bisection_step_bound",
    "min_rate",
    "bcd_solve",
    "bcd_solve_channels",
    "bcd_solve_batch",
]

# Relative slack on the p_max box so a target reached exactly at full power
# is not rejected by the last bit of the linear solve.
POWER_SLACK = 1e-10
MMSE_RESIDUAL_TOL = 1e-8
DEFAULT_MAX_BCD_ITERS = 50


class NumericalError(RuntimeError):
    """A linear solve failed its residual check."""


class DegenerateCombinerError(ValueError):
    """SINR requested for an all-zero combining vector."""


def _entries(H) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H, dtype=complex)


def _herm(X):
    return np.conj(np.swapaxes(X, -1, -2))


@dataclass(frozen=True)
class SinrCoefficients:
    """``cross_gains[..., k, i] = |w_k^H h_i|^2``, ``noise_terms[..., k] = ||w_k||^2 sigma^2``."""

    cross_gains: np.ndarray
    noise_terms: np.ndarray


@dataclass
class InnerSolution:
    combining: np.ndarray
    power: np.ndarray
    min_rate: float
    iterations: int
    converged: bool
    # G value after initialisation and after every BCD iteration
    trace: list = field(default_factory=list)
    # common SINR returned by each bisection call
    bisection_etas: list = field(default_factory=list)


@dataclass
class BatchInnerSolution:
    combining: np.ndarray  # (B, M, K)
    power: np.ndarray  # (B, K)
    min_rate: np.ndarray  # (B,)
    iterations: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    traces: list
    bisection_etas: list

    def __len__(self):
        return self.min_rate.shape[0]

    def item(self, i: int) -> InnerSolution:
        return InnerSolution(
            combining=self.combining[i],
            power=self.power[i],
            min_rate=float(self.min_rate[i]),
            iterations=int(self.iterations[i]),
            converged=bool(self.converged[i]),
            trace=list(self.traces[i]),
            bisection_etas=list(self.bisection_etas[i]),
        )


def sinr(w_k, H, power, k: int, noise_power: float) -> float:
    """Receive SINR of user ``k`` with combiner ``w_k``, evaluated directly."""
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    w_k = np.asarray(w_k, dtype=complex)
    H = _entries(H)
    p = np.asarray(power, dtype=float)
    wnorm2 = np.vdot(w_k, w_k).real
    if wnorm2 == 0:
        raise DegenerateCombinerError("degenerate combiner")
    gains = np.abs(w_k.conj() @ H) ** 2
    interference = sum(gains[i] * p[i] for i in range(H.shape[1]) if i != k)
    return float(gains[k] * p[k] / (interference + wnorm2 * noise_power))


def achievable_rate(sinr_value):
    """Shannon rate ``log2(1 + sinr)`` in bits/s/Hz."""
    return np.log2(1.0 + np.asarray(sinr_value, dtype=float))


def mmse_combiner(H, power, noise_power: float) -> np.ndarray:
    """MMSE combining matrix ``(H P H^H + sigma^2 I)^{-1} H``.

    The covariance is Hermitian positive definite for ``noise_power > 0``, so
    the system is solved directly and the residual checked instead of forming
    an inverse.

    Raises
    ------
    NumericalError
        If ``||R W - H||_F > 1e-8 ||H||_F`` for any item of the batch.
    """
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    H = _entries(H)
    p = np.asarray(power, dtype=float)
    M = H.shape[-2]
    R = (H * p[..., None, :]) @ _herm(H) + noise_power * np.eye(M)
    W = np.linalg.solve(R, H)
    resid = np.linalg.norm(R @ W - H, axis=(-2, -1))
    scale = np.linalg.norm(H, axis=(-2, -1))
    if np.any(resid > MMSE_RESIDUAL_TOL * scale):
        raise NumericalError(
            f"MMSE solve residual {np.max(resid / np.where(scale > 0, scale, 1)):.3e} "
            "exceeds tolerance"
        )
    return W


def sinr_coefficients(W, H, noise_power: float) -> SinrCoefficients:
    W = np.asarray(W, dtype=complex)
    H = _entries(H)
    cross = np.abs(_herm(W) @ H) ** 2
    noise = np.sum(np.abs(W) ** 2, axis=-2) * noise_power
    return SinrCoefficients(cross, noise)


def sinrs_from_coefficients(coeffs: SinrCoefficients, power) -> np.ndarray:
    """All users' SINRs ``p_k A_kk / (sum_{i!=k} p_i A_ki + b_k)``."""
    A = coeffs.cross_gains
    p = np.asarray(power, dtype=float)
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    signal = diag * p
    interference = np.einsum("...ki,...i->...k", A, p) - signal
    denom = interference + coeffs.noise_terms
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(signal > 0, signal / denom, 0.0)
    return out


def _target_system(A, eta):
    eta = np.asarray(eta, dtype=float)
    D = -A.copy()
    K = A.shape[-1]
    idx = np.arange(K)
    D[..., idx, idx] = A[..., idx, idx] / eta[..., None]
    return D


def _solve_batch(D, b):
    """Solve ``D p = b`` per item; singular items come back as NaN."""
    try:
        return np.linalg.solve(D, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full(b.shape, np.nan)
        flatD = D.reshape((-1,) + D.shape[-2:])
        flatb = b.reshape((-1, b.shape[-1]))
        flatout = out.reshape(flatb.shape)
        for i in range(flatD.shape[0]):
            try:
                flatout[i] = np.linalg.solve(flatD[i], flatb[i])
            except np.linalg.LinAlgError:
                pass
        return out


def _power_ok(p, p_max=None):
    ok = np.all(np.isfinite(p), axis=-1) & np.all(p >= 0, axis=-1)
    if p_max is not None:
        ok &= np.all(p <= p_max * (1 + POWER_SLACK), axis=-1)
    return ok


def power_for_target_sinr(coeffs: SinrCoefficients, eta):
    """Power vector giving every user SINR exactly ``eta``.

    Solves ``D(eta) p = b`` with ``D_kk = A_kk / eta`` and ``D_ki = -A_ki``.
    Returns ``None`` when the target is not reachable with nonnegative power
    (singular system, negative or non-finite entries). The ``p_max`` box is
    left to the caller.
    """
    A = np.asarray(coeffs.cross_gains, dtype=float)
    if eta <= 0:
        raise ValueError("eta must be positive")
    if np.any(np.diagonal(A, axis1=-2, axis2=-1) <= 0):
        raise ValueError("every user needs a positive direct gain A_kk")
    p = _solve_batch(_target_system(A, np.asarray(eta)), np.asarray(coeffs.noise_terms, dtype=float))
    if not np.all(_power_ok(p)):
        return None
    return p


def bisection_step_bound(eta_lo: float, eta_hi: float, eps: float) -> int:
    """Worst-case number of bisection halvings for an interval and tolerance."""
    width = eta_hi - eta_lo
    if width < eps:
        return 0
    return math.ceil(math.log2(width / eps)) + 1


def bisection_max_min_sinr(coeffs: SinrCoefficients, H, p_max: float, noise_power: float,
                           eps: float, eta_floor=None):
    """Largest common SINR reachable within the per-user power budget.

    Searches ``(0, p_max * min_k ||h_k||^2 / sigma^2)``; the upper end bounds
    any user's SINR by Cauchy-Schwarz. ``eta_floor`` optionally warm-starts
    the lower end at a known-achievable min SINR (e.g. the one of the current
    power vector); it is only used if the equal-SINR power at that level
    passes the box check.

    Returns
    -------
    eta : float or ndarray
        Common SINR of the returned power (0 when no positive target fits).
    power : ndarray
        ``p(eta)`` clipped to ``[0, p_max]``; all users' SINRs equal ``eta``.
    steps : int or ndarray
        Number of midpoint feasibility tests.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    A = np.asarray(coeffs.cross_gains, dtype=float)
    b = np.asarray(coeffs.noise_terms, dtype=float)
    Hm = _entries(H)
    scalar = A.ndim == 2
    if scalar:
        A, b, Hm = A[None], b[None], Hm[None]
    n, K = b.shape

    h_min = np.min(np.sum(np.abs(Hm) ** 2, axis=-2), axis=-1)
    hi = p_max * h_min / noise_power
    lo = np.zeros(n)
    p_lo = np.zeros((n, K))
    # a zero direct gain pins the min SINR at zero
    live = np.all(np.diagonal(A, axis1=-2, axis2=-1) > 0, axis=-1) & (hi > 0)

    if eta_floor is not None:
        floor = np.broadcast_to(np.asarray(eta_floor, dtype=float), (n,))
        idx = np.flatnonzero(live & (floor > 0))
        if idx.size:
            p = _solve_batch(_target_system(A[idx], floor[idx]), b[idx])
            ok = _power_ok(p, p_max)
            lo[idx[ok]] = floor[idx][ok]
            p_lo[idx[ok]] = p[ok]

    steps = np.zeros(n, dtype=int)
    while True:
        idx = np.flatnonzero(live & (hi - lo >= eps))
        if idx.size == 0:
            break
        mid = 0.5 * (lo[idx] + hi[idx])
        p = _solve_batch(_target_system(A[idx], mid), b[idx])
        ok = _power_ok(p, p_max)
        lo[idx[ok]] = mid[ok]
        p_lo[idx[ok]] = p[ok]
        hi[idx[~ok]] = mid[~ok]
        steps[idx] += 1

    power = np.clip(p_lo, 0.0, p_max)
    if scalar:
        return float(lo[0]), power[0], int(steps[0])
    return lo, power, steps


def min_rate(W, H, power, noise_power: float):
    """Minimum user rate for a given combiner and power vector."""
    gamma = sinrs_from_coefficients(sinr_coefficients(W, H, noise_power), power)
    return np.min(achievable_rate(gamma), axis=-1)


def bcd_solve_batch(H, p_max: float, noise_power: float, xi: float = 1e-3, eps: float = 1e-3,
                    max_iter: int = DEFAULT_MAX_BCD_ITERS) -> BatchInnerSolution:
    """Alternate MMSE combining and equal-SINR power control per channel.

    ``H`` has shape ``(B, M, K)``. Each item starts from full power and its
    MMSE receiver, then repeats: bisection power update for the current
    receiver, MMSE receiver for the new power, min-rate evaluation. An item
    stops once its min rate moves by less than ``xi`` or after ``max_iter``
    iterations; the best iterate seen is returned.
    """
    if xi <= 0 or eps <= 0:
        raise ValueError("xi and eps must be positive")
    H = _entries(H)
    if H.ndim != 3:
        raise ValueError("H must have shape (B, M, K)")
    B, M, K = H.shape

    p = np.full((B, K), float(p_max))
    W = mmse_combiner(H, p, noise_power)
    G = min_rate(W, H, p, noise_power)
    traces = [[float(g)] for g in G]
    etas = [[] for _ in range(B)]

    best_W, best_p, best_G = W.copy(), p.copy(), G.copy()
    iterations = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Hs, Ws = H[idx], W[idx]
        coeffs = sinr_coefficients(Ws, Hs, noise_power)
        floor = np.min(sinrs_from_coefficients(coeffs, p[idx]), axis=-1)
        eta, p_new, _ = bisection_max_min_sinr(coeffs, Hs, p_max, noise_power, eps, eta_floor=floor)
        W_new = mmse_combiner(Hs, p_new, noise_power)
        G_new = min_rate(W_new, Hs, p_new, noise_power)

        p[idx], W[idx] = p_new, W_new
        iterations[idx] += 1
        for j, i in enumerate(idx):
            traces[i].append(float(G_new[j]))
            etas[i].append(float(eta[j]))
        better = G_new > best_G[idx]
        bi = idx[better]
        best_W[bi], best_p[bi], best_G[bi] = W_new[better], p_new[better], G_new[better]

        done = np.abs(G_new - G[idx]) < xi
        G[idx] = G_new
        converged[idx[done]] = True
        active[idx[done]] = False

    return BatchInnerSolution(best_W, best_p, best_G, iterations, converged, traces, etas)


def bcd_solve_channels(H, p_max: float, noise_power: float, xi: float = 1e-3, eps: float = 1e-3,
                       max_iter: int = DEFAULT_MAX_BCD_ITERS) -> InnerSolution:
    """Single-channel version of :func:`bcd_solve_batch` for an (M, K) matrix."""
    Hm = _entries(H)
    sol = bcd_solve_batch(Hm[None], p_max, noise_power, xi, eps, max_iter).item(0)
    if not sol.converged:
        logger.warning("BCD hit the %d-iteration cap without converging", max_iter)
    return sol


def bcd_solve(apv, scenario, xi: float = 1e-3, eps: float = 1e-3,
              max_iter: int = DEFAULT_MAX_BCD_ITERS) -> InnerSolution:
    """Max-min rate, combiner and powers for one placement of a scenario."""
    cfg = scenario.config
    H = channel_tensor(apv, scenario.users, cfg.wavelength)
    return bcd_solve_channels(H, cfg.p_max, cfg.noise_power, xi, eps, max_iter)
