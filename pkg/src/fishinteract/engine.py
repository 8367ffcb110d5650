"""Closed-loop rollouts of the interaction model for pairs and larger groups."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dli import GaussianAccelPrediction, state_matrix
from .trajio import Trajectory

POLICIES = ("reflect", "clamp")


class RolloutError(RuntimeError):
    def __init__(self, message, last_good_tick):
        super().__init__(f"{message} (last good tick {last_good_tick})")
        self.last_good_tick = last_good_tick


@dataclass
class RolloutConfig:
    steps: int = 500_000
    dt: float = 0.12
    seed: int = 0
    containment: str = "reflect"
    n_agents: int = 2
    strict_paper_noise: bool = False
    radius: float = 25.0
    init_speed: tuple = (5.0, 15.0)
    init_clearance: float = 2.0

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.n_agents < 2:
            raise ValueError("a rollout needs at least two agents")
        if self.containment not in POLICIES:
            raise ValueError(f"unknown containment policy {self.containment!r}")


def agent_rng(seed, agent):
    """Independent stream for one agent; unaffected by how many agents exist."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(agent,)))


def init_agents(config: RolloutConfig, rngs, history=5):
    """Straight-line starting windows: positions (N, history, 2), velocities alike."""
    R, dt = config.radius, config.dt
    lo, hi = config.init_speed
    pos = np.empty((config.n_agents, history, 2))
    vel = np.empty_like(pos)
    steps = dt * np.arange(history)
    for a, rng in enumerate(rngs):
        while True:
            phi = rng.uniform(-math.pi, math.pi)
            speed = rng.uniform(lo, hi)
            r = (R - config.init_clearance) * math.sqrt(rng.random())
            ang = rng.uniform(-math.pi, math.pi)
            v = speed * np.array([math.cos(phi), math.sin(phi)])
            start = r * np.array([math.cos(ang), math.sin(ang)])
            track = start + steps[:, None] * v
            if np.all(R - np.hypot(track[:, 0], track[:, 1]) >= config.init_clearance):
                break
        pos[a] = track
        vel[a] = v
    return pos, vel


def sample_acceleration(pred: GaussianAccelPrediction, rng, strict_paper_noise=False):
    """``a = mu + sigma * g`` with independent standard normal ``g``.

    With ``strict_paper_noise`` the y noise is scaled by ``sigma_x``, as the
    printed formula literally reads.
    """
    g = rng.standard_normal(2)
    sx, sy = pred.sigma
    return np.array([pred.mu[0] + sx * g[0], pred.mu[1] + (sx if strict_paper_noise else sy) * g[1]])


def integrate(u, v, a, dt):
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    v_new = np.asarray(v, dtype=float) + dt * np.asarray(a, dtype=float)
    return np.asarray(u, dtype=float) + dt * v_new, v_new


def contain(u, v, radius=25.0, policy="reflect"):
    """Keep one agent inside the circular arena.

    Returns ``(u, v, intervened)``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown containment policy {policy!r}")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    r = math.hypot(u[0], u[1])
    if r <= radius:
        return u, v, False
    n = u / r
    radial = float(v @ n)
    if policy == "reflect":
        mirrored = 2 * radius - r
        if 0 <= mirrored <= radius:
            v_out = v - 2 * radial * n if radial > 0 else v
            return n * mirrored, v_out, True
    v_out = v - radial * n if radial > 0 else v
    return n * (radius - 1e-6), v_out, True


def _neighbor_pairs(n):
    return [(i, j) for i in range(n) for j in range(n) if j != i]


def rollout(model, config: RolloutConfig, group=None):
    """Run the closed loop and return ``(Trajectory, info)``.

    Every agent uses the same pair model. In group mode, each focal agent is
    evaluated against every other agent; the two candidate means with the
    largest magnitude are summed and their standard deviations averaged. With
    a single neighbor this reduces to the pair update.
    """
    N, R, dt = config.n_agents, config.radius, config.dt
    if group is None:
        group = N > 2
    if not group and N != 2:
        raise ValueError("pair mode needs exactly two agents")
    rngs = [agent_rng(config.seed, a) for a in range(N)]
    pos, vel = init_agents(config, rngs)
    pairs = _neighbor_pairs(N)
    focal = np.array([p[0] for p in pairs])
    other = np.array([p[1] for p in pairs])
    out = np.empty((config.steps, N, 2))
    interventions = 0
    for tick in range(config.steps):
        X = state_matrix(pos[focal] / R, vel[focal] / R, pos[other] / R, vel[other] / R)
        raw = model.raw_output(X)
        mu = raw[:, :2] * R
        sigma = np.exp(raw[:, 2:]) * R
        new_pos = np.empty((N, 2))
        new_vel = np.empty((N, 2))
        for i in range(N):
            rows = np.flatnonzero(focal == i)
            if len(rows) > 1:
                mag = np.hypot(mu[rows, 0], mu[rows, 1])
                top = rows[np.argsort(-mag, kind="stable")[:2]]
                m, s = mu[top].sum(axis=0), sigma[top].mean(axis=0)
            else:
                m, s = mu[rows[0]], sigma[rows[0]]
            a = sample_acceleration(GaussianAccelPrediction(m, s), rngs[i], config.strict_paper_noise)
            u_new, v_new = integrate(pos[i, -1], vel[i, -1], a, dt)
            u_new, v_new, hit = contain(u_new, v_new, R, config.containment)
            interventions += hit
            new_pos[i], new_vel[i] = u_new, v_new
        if not (np.all(np.isfinite(new_pos)) and np.all(np.isfinite(new_vel))):
            raise RolloutError("non-finite state", tick - 1)
        pos = np.concatenate([pos[:, 1:], new_pos[:, None]], axis=1)
        vel = np.concatenate([vel[:, 1:], new_vel[:, None]], axis=1)
        out[tick] = new_pos
    info = {"containment_interventions": interventions, "steps": config.steps, "n_agents": N}
    return Trajectory(out, dt, dt, "rollout"), info


def rollout_pair(model, config: RolloutConfig):
    return rollout(model, config, group=False)


def rollout_group(model, config: RolloutConfig):
    return rollout(model, config, group=True)
