"""Burst-and-coast kick model for a pair of agents.

Each agent lives on its own timeline of kick events. At a kick the agent
picks a heading change (wall + social + noise), a kick length and a kick
duration, then glides in a straight line to the next kick position. The
agent with the earliest pending decision is always advanced next, and it
sees its neighbor at the neighbor's interpolated glide position.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator

from .trajio import Trajectory, read_kv, write_kv

DEG = math.pi / 180.0


@dataclass(frozen=True)
class KickEvent:
    t: float
    phi: float
    u: tuple
    tau: float
    length: float
    dphi: float


@dataclass
class InteractionParams:
    """Kernel strengths are in degrees, ranges in cm."""

    wall_strength: float = 15.0
    wall_range: float = 6.0
    asymmetry: float = 0.1
    attraction_strength: float = 100.0
    attraction_eq: float = 3.0
    attraction_range: float = 50.0
    alignment_strength: float = 40.0
    alignment_range: float = 40.0
    noise_std: float = 15.0

    def __post_init__(self):
        for name in ("wall_strength", "attraction_strength", "alignment_strength", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("wall_range", "attraction_range", "alignment_range"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def save(self, path):
        write_kv(path, asdict(self))

    @classmethod
    def load(cls, path):
        kv = read_kv(path)
        names = {f.name for f in fields(cls)}
        unknown = set(kv) - names
        if unknown:
            raise ValueError(f"unknown interaction parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in kv.items()})


class KickDistributions:
    """Sampler for (kick length, kick duration) pairs.

    Without a table, both are shifted Gamma variates: ``tau = tau_min +
    Gamma(shape, (tau_mean - tau_min) / shape)`` and likewise for the length.
    With a table, rows are drawn with probability proportional to their
    weight.
    """

    def __init__(self, tau_mean=0.5, tau_min=0.1, length_mean=7.0, length_min=1.0,
                 shape=4.0, table=None):
        if not (tau_mean > tau_min > 0 and length_mean > length_min > 0 and shape > 0):
            raise ValueError("kick means must exceed their positive minima")
        self.tau_mean = tau_mean
        self.tau_min = tau_min
        self.length_mean = length_mean
        self.length_min = length_min
        self.shape = shape
        self.table = None
        if table is not None:
            table = np.asarray(table, dtype=float)
            if table.ndim != 2 or table.shape[1] != 3 or len(table) == 0:
                raise ValueError("kick table must have rows of (l_cm, tau_s, weight)")
            if np.any(table[:, :2] <= 0) or np.any(table[:, 2] < 0) or table[:, 2].sum() <= 0:
                raise ValueError("kick table needs positive lengths/durations and weights")
            self.table = table
            self._p = table[:, 2] / table[:, 2].sum()

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["l_cm", "tau_s", "weight"]:
                raise ValueError(f"{path}: header must be l_cm,tau_s,weight")
            rows = [(float(r["l_cm"]), float(r["tau_s"]), float(r["weight"])) for r in reader]
        return cls(table=rows)

    def to_csv(self, path):
        if self.table is None:
            raise ValueError("parametric distributions have no table")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("l_cm,tau_s,weight\n")
            for l, tau, w in self.table:
                fh.write(f"{float(l)!r},{float(tau)!r},{float(w)!r}\n")

    def sample(self, rng, n):
        """Return arrays ``(lengths, durations)`` of size ``n``."""
        if self.table is not None:
            rows = rng.choice(len(self.table), size=n, p=self._p)
            return self.table[rows, 0], self.table[rows, 1]
        k = self.shape
        length = self.length_min + rng.gamma(k, (self.length_mean - self.length_min) / k, n)
        tau = self.tau_min + rng.gamma(k, (self.tau_mean - self.tau_min) / k, n)
        return length, tau


def advance(t, phi, u, tau, length, dphi):
    """Kick update: ``t + tau``, the new heading and ``u + length * e(new heading)``.

    Angles in radians; the returned heading is wrapped to (-pi, pi].
    """
    ang = phi + dphi
    new_phi = math.atan2(math.sin(ang), math.cos(ang))
    return t + tau, new_phi, (u[0] + length * math.cos(ang), u[1] + length * math.sin(ang))


def wall_turn(r_w, theta_w, params: InteractionParams):
    """Wall contribution in radians for ``theta_w`` in radians; turns away from the wall."""
    decay = math.exp(-((r_w / params.wall_range) ** 2))
    return params.wall_strength * DEG * decay * math.sin(theta_w) * (1 + params.asymmetry * math.cos(theta_w))


def social_turn(d, psi, phi_ij, params: InteractionParams):
    """Attraction plus alignment, radians in and out."""
    la = params.attraction_range
    f_att = (d - params.attraction_eq) / la * math.exp(-((d / la) ** 2))
    f_ali = math.exp(-((d / params.alignment_range) ** 2))
    return (
        params.attraction_strength * DEG * f_att * math.sin(psi) * (1 + math.cos(phi_ij)) / 2
        + params.alignment_strength * DEG * f_ali * math.sin(phi_ij)
    )


def heading_change(r_w, theta_w, params: InteractionParams, neighbor=None, rng=None,
                   at_center=False):
    """Heading change in degrees.

    ``theta_w`` and the angles of ``neighbor = (d_ij, psi_ij, phi_ij)`` are in
    degrees. The wall term is zero at the exact tank center, where the wall
    normal is undefined. Noise is added only when ``rng`` is given.
    """
    turn = 0.0 if at_center else wall_turn(r_w, theta_w * DEG, params)
    if neighbor is not None:
        d, psi, phi_ij = neighbor
        turn += social_turn(d, psi * DEG, phi_ij * DEG, params)
    out = turn / DEG
    if rng is not None and params.noise_std > 0:
        out += params.noise_std * rng.standard_normal()
    return out


@dataclass
class Timeline:
    """Kick history of one agent.

    ``t``, ``u`` and ``phi`` hold one entry per kick instant plus the final
    pending instant; ``phi[n]`` is the heading of the glide arriving at
    ``u[n]``. ``tau``, ``length`` and ``dphi`` hold the decisions taken at
    each of the first ``n_kicks`` instants.
    """

    t: np.ndarray
    u: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    length: np.ndarray
    dphi: np.ndarray

    @property
    def n_kicks(self) -> int:
        return len(self.tau)

    def events(self):
        return [
            KickEvent(float(self.t[n]), float(self.phi[n]) / DEG, tuple(self.u[n]),
                      float(self.tau[n]), float(self.length[n]), float(self.dphi[n]) / DEG)
            for n in range(self.n_kicks)
        ]

    def position_at(self, times):
        times = np.asarray(times, dtype=float)
        if np.any(times < self.t[0] - 1e-12) or np.any(times > self.t[-1] + 1e-12):
            raise ValueError(
                f"requested time outside the covered span [{self.t[0]}, {self.t[-1]}]"
            )
        return np.column_stack([np.interp(times, self.t, self.u[:, 0]),
                                np.interp(times, self.t, self.u[:, 1])])


class _Agent:
    # Mutable per-agent state during a simulation.

    def __init__(self, rng, dists, x, y, phi, block=4096):
        self.rng = rng
        self.dists = dists
        self.block = block
        self.t = [0.0]
        self.x = [x]
        self.y = [y]
        self.phi = [phi]
        self.tau = []
        self.length = []
        self.dphi = []
        self._draws = iter(())

    def next_kick(self):
        try:
            return next(self._draws)
        except StopIteration:
            l, tau = self.dists.sample(self.rng, self.block)
            self._draws = iter(zip(l.tolist(), tau.tolist()))
            return next(self._draws)

    def state_at(self, t):
        """Position and heading at time ``t`` within the current glide."""
        n = len(self.tau)
        if n == 0 or t >= self.t[-1]:
            return self.x[-1], self.y[-1], self.phi[-1]
        t0 = self.t[n - 1]
        w = (t - t0) / self.tau[n - 1]
        x = self.x[n - 1] + w * (self.x[n] - self.x[n - 1])
        y = self.y[n - 1] + w * (self.y[n] - self.y[n - 1])
        return x, y, self.phi[-1]

    def timeline(self):
        return Timeline(np.array(self.t), np.column_stack([self.x, self.y]), np.array(self.phi),
                        np.array(self.tau), np.array(self.length), np.array(self.dphi))


class BurstCoastModel(BaseEstimator):
    """Pair simulator for the burst-and-coast kick model.

    Parameters mirror :class:`InteractionParams` plus the arena radius and the
    kick distributions. ``fit`` replaces the parametric kick distributions
    by an empirical table built from observed (length, duration) pairs.
    """

    def __init__(self, radius=25.0, wall_strength=15.0, wall_range=6.0, asymmetry=0.1,
                 attraction_strength=100.0, attraction_eq=3.0, attraction_range=50.0,
                 alignment_strength=40.0, alignment_range=40.0, noise_std=15.0,
                 distributions=None, max_redraws=50, wall_margin=1e-6):
        self.radius = radius
        self.wall_strength = wall_strength
        self.wall_range = wall_range
        self.asymmetry = asymmetry
        self.attraction_strength = attraction_strength
        self.attraction_eq = attraction_eq
        self.attraction_range = attraction_range
        self.alignment_strength = alignment_strength
        self.alignment_range = alignment_range
        self.noise_std = noise_std
        self.distributions = distributions
        self.max_redraws = max_redraws
        self.wall_margin = wall_margin

    @classmethod
    def from_params(cls, params: InteractionParams, **kwargs):
        return cls(**asdict(params), **kwargs)

    @property
    def params(self) -> InteractionParams:
        return InteractionParams(**{f.name: getattr(self, f.name) for f in fields(InteractionParams)})

    def fit(self, X, y=None):
        """Use observed kicks ``X[:, 0] = length (cm)``, ``X[:, 1] = duration (s)``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2 or len(X) == 0:
            raise ValueError("X must be an (n, 2) array of (length, duration)")
        self.distributions = KickDistributions(table=np.column_stack([X, np.ones(len(X))]))
        return self

    def _dists(self):
        return self.distributions if self.distributions is not None else KickDistributions()

    def _place(self, rng, margin=2.0):
        r = (self.radius - margin) * math.sqrt(rng.random())
        a = 2 * math.pi * rng.random()
        return r * math.cos(a), r * math.sin(a), 2 * math.pi * rng.random() - math.pi

    def step_kick(self, agent: _Agent, other: _Agent | None, params=None):
        """Take the pending decision of ``agent`` and append its next kick instant."""
        params = params or self.params
        R = self.radius
        now = agent.t[-1]
        x, y, phi = agent.x[-1], agent.y[-1], agent.phi[-1]
        rr = math.hypot(x, y)
        theta_w = phi - math.atan2(y, x)
        wall = 0.0 if rr == 0.0 else wall_turn(R - rr, theta_w, params)
        social = 0.0
        if other is not None:
            ox, oy, ophi = other.state_at(now)
            dx, dy = ox - x, oy - y
            d = math.hypot(dx, dy)
            if d > 0:
                social = social_turn(d, math.atan2(dy, dx) - phi, ophi - phi, params)
        drift = wall + social
        length, tau = agent.next_kick()
        sigma = params.noise_std * DEG
        limit = R - self.wall_margin
        for _ in range(self.max_redraws):
            dphi = drift + sigma * agent.rng.standard_normal()
            ex, ey = math.cos(phi + dphi), math.sin(phi + dphi)
            nx, ny = x + length * ex, y + length * ey
            if nx * nx + ny * ny < limit * limit:
                break
        else:
            # Reflect the heading about the wall tangent; shorten the kick if
            # even the reflected glide would leave the tank.
            if rr > 0:
                cx, cy = x / rr, y / rr
                dot = ex * cx + ey * cy
                if dot > 0:
                    ex, ey = ex - 2 * dot * cx, ey - 2 * dot * cy
            b = x * ex + y * ey
            reach = -b + math.sqrt(max(b * b - (rr * rr - limit * limit), 0.0))
            if length >= reach:
                length = 0.5 * reach
            dphi = math.atan2(ey, ex) - phi
        t_next, new_phi, (nx, ny) = advance(now, phi, (x, y), tau, length, dphi)
        agent.tau.append(tau)
        agent.length.append(length)
        agent.dphi.append(math.atan2(math.sin(dphi), math.cos(dphi)))
        agent.t.append(t_next)
        agent.x.append(nx)
        agent.y.append(ny)
        agent.phi.append(new_phi)

    def simulate(self, duration, seed=0, n_agents=2):
        """Generate kick timelines covering ``[0, duration]`` for every agent."""
        if not duration > 0:
            raise ValueError("duration must be positive")
        params = self.params
        dists = self._dists()
        ss = np.random.SeedSequence(seed)
        init_rng, *agent_seeds = ss.spawn(n_agents + 1)
        init_rng = np.random.default_rng(init_rng)
        agents = [_Agent(np.random.default_rng(s), dists, *self._place(init_rng)) for s in agent_seeds]
        while True:
            times = [a.t[-1] for a in agents]
            i = int(np.argmin(times))
            if times[i] >= duration and all(a.tau for a in agents):
                break
            focal = agents[i]
            other = agents[1 - i] if n_agents == 2 else None
            self.step_kick(focal, other, params)
        return [a.timeline() for a in agents]

    def trajectory(self, steps, dt=0.12, seed=0, run_id="abc"):
        """Simulate and resample to ``steps`` uniform ticks."""
        timelines = self.simulate(steps * dt, seed)
        return resample_events(timelines, dt, steps=steps, run_id=run_id)


def resample_events(timelines, dt=0.12, duration=None, steps=None, run_id="abc") -> Trajectory:
    """Uniform-tick positions by straight-line interpolation along each glide.

    Ticks are ``k * dt`` for ``k = 0 .. floor(duration / dt) - 1``.
    """
    if steps is None:
        if duration is None:
            duration = min(tl.t[-1] for tl in timelines)
        steps = int(math.floor(duration / dt + 1e-9))
    ticks = dt * np.arange(steps)
    positions = np.stack([tl.position_at(ticks) for tl in timelines], axis=1)
    return Trajectory(positions, dt, 0.0, run_id)

