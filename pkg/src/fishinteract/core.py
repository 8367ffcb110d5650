"""Arena geometry, agent states and the instantaneous behavioral variables.

Angles are exchanged in degrees and computed in radians internally. Every
angle returned by this module lies in (-180, 180].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised when an angle is undefined for the given configuration."""


@dataclass(frozen=True)
class ArenaSpec:
    radius: float = 25.0
    body_length: float = 3.5
    dt: float = 0.12

    def __post_init__(self):
        for name in ("radius", "body_length", "dt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class AgentState:
    u: np.ndarray
    v: np.ndarray
    r_w: float

    @classmethod
    def from_motion(cls, u, v, radius: float = 25.0) -> "AgentState":
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return cls(u, v, float(radius - np.hypot(u[0], u[1])))


@dataclass(frozen=True)
class SystemState:
    s_i: AgentState
    s_j: AgentState
    d_ij: float

    @classmethod
    def from_agents(cls, s_i: AgentState, s_j: AgentState) -> "SystemState":
        d = float(np.hypot(*(s_i.u - s_j.u)))
        return cls(s_i, s_j, d)


@dataclass(frozen=True)
class InstantObservables:
    V: float
    r_w: float
    theta_w: float
    phi: float
    d_ij: float
    phi_ij: float
    psi_ij: float
    leader_flag: bool = field(default=False)


def wrap_angle(raw):
    """Wrap degrees into (-180, 180]. Accepts scalars or arrays."""
    arr = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot wrap a non-finite angle")
    out = 180.0 - np.mod(180.0 - arr, 360.0)
    if out.ndim == 0:
        return float(out)
    return out


def wrap_rad(raw):
    """Radian counterpart of :func:`wrap_angle`, no finiteness check."""
    return np.pi - np.mod(np.pi - raw, 2 * np.pi)


def heading(v) -> float:
    vx, vy = (float(c) for c in v)
    if vx == 0.0 and vy == 0.0:
        raise GeometryError("heading is undefined for a zero velocity")
    return wrap_angle(math.degrees(math.atan2(vy, vx)))


def incidence_angle(u, v) -> float:
    """Angle between the velocity and the outward wall normal at ``u``."""
    x, y = (float(c) for c in u)
    if x == 0.0 and y == 0.0:
        raise GeometryError("wall normal is undefined at the tank center")
    phi = heading(v)
    return wrap_angle(phi - math.degrees(math.atan2(y, x)))


def viewing_angle(u_i, phi_i: float, u_j) -> float:
    """Bearing of ``u_j`` as seen by an agent at ``u_i`` heading ``phi_i``."""
    dx = float(u_j[0]) - float(u_i[0])
    dy = float(u_j[1]) - float(u_i[1])
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("viewing angle is undefined for coincident agents")
    return wrap_angle(math.degrees(math.atan2(dy, dx)) - phi_i)


def geometric_leader(psi_ij: float, psi_ji: float, i: int = 0, j: int = 1) -> int:
    """Index of the geometric leader of the pair.

    The leader is the agent that must turn further to face its partner. Ties
    go to the lower index.
    """
    a, b = abs(psi_ij), abs(psi_ji)
    if a > b:
        return i
    if b > a:
        return j
    return min(i, j)


def wall_distance(u, radius: float):
    u = np.asarray(u, dtype=float)
    return radius - np.hypot(u[..., 0], u[..., 1])


def backward_velocity(positions: np.ndarray, dt: float) -> np.ndarray:
    """Velocities ``(u[n] - u[n-1]) / dt`` for frames 1..T-1 of a (T, ...) array."""
    return np.diff(positions, axis=0) / dt


# Vectorized forms used by the metrics and the simulators. They return NaN
# where the angle is undefined instead of raising.


def headings_rad(v: np.ndarray) -> np.ndarray:
    vx, vy = v[..., 0], v[..., 1]
    out = np.arctan2(vy, vx)
    return np.where((vx == 0) & (vy == 0), np.nan, out)


def incidence_rad(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    x, y = u[..., 0], u[..., 1]
    normal = np.where((x == 0) & (y == 0), np.nan, np.arctan2(y, x))
    return wrap_rad(headings_rad(v) - normal)


def viewing_rad(u_i: np.ndarray, phi_i: np.ndarray, u_j: np.ndarray) -> np.ndarray:
    d = u_j - u_i
    bearing = np.arctan2(d[..., 1], d[..., 0])
    bearing = np.where((d[..., 0] == 0) & (d[..., 1] == 0), np.nan, bearing)
    return wrap_rad(bearing - phi_i)
