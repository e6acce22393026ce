"""Field-response channel model for a planar array of movable antennas.

Every user reaches the array over ``L_k`` far-field paths. A path arriving
with elevation ``theta`` and azimuth ``phi`` sees an extra propagation
distance ``x sin(theta) cos(phi) + y cos(theta)`` at antenna position
``(x, y)`` relative to the region origin, so the channel entry at that
antenna is the path gains summed with the conjugate unit-modulus phases.

All routines accept positions with arbitrary leading batch dimensions, which
is how the swarm evaluates every particle in one pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "UserChannelSpec",
    "ChannelMatrix",
    "phase_difference",
    "field_response_vector",
    "channel_vector",
    "channel_matrix",
    "channel_tensor",
]


@dataclass(frozen=True)
class UserChannelSpec:
    """Angular-domain description of one user's multipath channel.

    Parameters
    ----------
    elevation_aoas, azimuth_aoas : array_like of float, shape (L,)
        Arrival angles in radians, each within [-pi/2, pi/2].
    path_response : array_like of complex, shape (L,)
        Path gains referenced to the region origin.
    distance : float
        User-to-array distance in metres. Only kept for bookkeeping.
    """

    elevation_aoas: np.ndarray
    azimuth_aoas: np.ndarray
    path_response: np.ndarray
    distance: float = float("nan")
    # (L, 2) array of [sin(theta) cos(phi), cos(theta)], the x and y weights
    directions: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = np.asarray(self.elevation_aoas, dtype=float).reshape(-1)
        phi = np.asarray(self.azimuth_aoas, dtype=float).reshape(-1)
        g = np.asarray(self.path_response, dtype=complex).reshape(-1)
        if not (theta.size == phi.size == g.size) or theta.size == 0:
            raise ValueError(
                "angle and path-response lists must share a length >= 1, got "
                f"{theta.size}, {phi.size}, {g.size}"
            )
        bound = np.pi / 2
        if np.any(np.abs(theta) > bound) or np.any(np.abs(phi) > bound):
            raise ValueError("arrival angles must lie in [-pi/2, pi/2]")
        for arr in (theta, phi, g):
            arr.setflags(write=False)
        object.__setattr__(self, "elevation_aoas", theta)
        object.__setattr__(self, "azimuth_aoas", phi)
        object.__setattr__(self, "path_response", g)
        directions = np.stack([np.sin(theta) * np.cos(phi), np.cos(theta)], axis=-1)
        directions.setflags(write=False)
        object.__setattr__(self, "directions", directions)

    @property
    def path_count(self) -> int:
        return self.path_response.size


@dataclass(frozen=True)
class ChannelMatrix:
    """M x K channel from all users to the array, with the wavelength used."""

    entries: np.ndarray
    carrier_wavelength: float

    @property
    def num_antennas(self) -> int:
        return self.entries.shape[-2]

    @property
    def num_users(self) -> int:
        return self.entries.shape[-1]


def _as_positions(apv) -> np.ndarray:
    pos = np.asarray(apv, dtype=float)
    if pos.shape[-1] != 2:
        # flattened [x1, y1, x2, y2, ...] layout
        pos = pos.reshape(pos.shape[:-1] + (-1, 2))
    return pos


def phase_difference(pos, theta, phi):
    """Path-length difference between ``pos`` and the origin, in metres."""
    pos = np.asarray(pos, dtype=float)
    return pos[..., 0] * np.sin(theta) * np.cos(phi) + pos[..., 1] * np.cos(theta)


def field_response_vector(pos, user: UserChannelSpec, wavelength: float) -> np.ndarray:
    """Unit-modulus phase responses of the user's paths at one position.

    Returns an array of shape ``pos.shape[:-1] + (L,)``.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    rho = np.asarray(pos, dtype=float) @ user.directions.T
    return np.exp(1j * (2 * np.pi / wavelength) * rho)


def channel_vector(apv, user: UserChannelSpec, wavelength: float) -> np.ndarray:
    """Channel from one user to every antenna of ``apv``.

    ``apv`` is either an (M, 2) array of positions or the flattened 2M vector,
    optionally with leading batch dimensions. Each entry is
    ``f(r_m)^H g``: the path gains weighted by conjugated phase responses.
    """
    frv = field_response_vector(_as_positions(apv), user, wavelength)
    # explicit product + sum: BLAS may reorder the accumulation
    return np.sum(frv.conj() * user.path_response, axis=-1)


def channel_tensor(apv, users: Sequence[UserChannelSpec], wavelength: float) -> np.ndarray:
    """Raw ``(..., M, K)`` complex channel array for batched positions."""
    if len(users) == 0:
        raise ValueError("need at least one user")
    pos = _as_positions(apv)
    return np.stack([channel_vector(pos, u, wavelength) for u in users], axis=-1)


def channel_matrix(apv, users: Sequence[UserChannelSpec], wavelength: float) -> ChannelMatrix:
    """Stack the per-user channel vectors into an M x K ``ChannelMatrix``."""
    return ChannelMatrix(channel_tensor(apv, users, wavelength), float(wavelength))
