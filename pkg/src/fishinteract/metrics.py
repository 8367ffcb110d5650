"""Validation observables for pair trajectories.

Six instantaneous distributions (speed, wall distance, wall incidence,
distance, alignment, viewing angle), three temporal correlations (mean
squared displacement, velocity autocorrelation, incidence autocorrelation),
summary tables and histogram distances.

Observables use frames 1..T-1 of each segment, where a backward-difference
velocity exists. Correlations average over every valid reference time of
every segment and agent, pooled before dividing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import headings_rad, incidence_rad, viewing_rad
from .trajio import Trajectory, write_kv

DEFAULT_BINS = {
    "V": (0.0, 35.0, 70),
    "r_w": (0.0, 25.0, 50),
    "theta_w": (-180.0, 180.0, 72),
    "d_ij": (0.0, 50.0, 100),
    "phi_ij": (-180.0, 180.0, 72),
    "psi_ij": (-180.0, 180.0, 72),
}
OBSERVABLES = ("V", "r_w", "theta_w", "d_ij", "phi_ij", "psi_ij")
CORRELATIONS = ("msd", "vacf", "theta_w_corr")


class EmptyCurveError(ValueError):
    pass


class MetricsError(ValueError):
    pass


@dataclass
class Histogram:
    """``count`` samples fell inside the bins, ``outside`` finite samples did not."""

    edges: np.ndarray
    density: np.ndarray
    count: int
    outside: int = 0

    @property
    def samples(self):
        return self.count + self.outside

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self):
        return np.diff(self.edges)

    def integral(self):
        return float(np.sum(self.density * self.widths))


@dataclass
class CorrelationCurve:
    lags: np.ndarray
    values: np.ndarray
    counts: np.ndarray


@dataclass
class SummaryStats:
    """``table[quantity][role] = (mean, std)``; roles are pair, leader, follower."""

    table: dict

    def flat(self):
        out = {}
        for q, roles in self.table.items():
            for role, (mean, std) in roles.items():
                out[f"{q}.{role}.mean"] = float(mean)
                out[f"{q}.{role}.std"] = float(std)
        return out


def _segments(data):
    if isinstance(data, Trajectory):
        return [data]
    if hasattr(data, "segments"):
        return list(data.segments)
    return list(data)


def histogram(values, lo, hi, bins) -> Histogram:
    """Probability density over ``[lo, hi]``; samples outside the range are counted, not binned.

    Values are rounded to 1e-9 first so that rounding noise cannot split a
    sample sitting exactly on a bin edge.
    """
    values = np.asarray(values, dtype=float).ravel()
    values = np.round(values[np.isfinite(values)], 9)
    keep = (values >= lo) & (values <= hi)
    counts, edges = np.histogram(values[keep], bins=bins, range=(lo, hi))
    n = int(counts.sum())
    outside = int(len(values) - n)
    if n == 0:
        return Histogram(edges, np.zeros(bins), 0, outside)
    return Histogram(edges, counts / (n * np.diff(edges)), n, outside)


def frame_observables(data, radius=25.0):
    """Per-frame instantaneous variables pooled over segments.

    Returns a dict of arrays: ``V``, ``r_w``, ``theta_w`` of shape (F, N)
    (degrees for angles), and for pairs ``d_ij`` (F,), ``phi_ij`` (F, 2)
    holding both orderings, ``psi`` (F, 2) with ``psi[:, i]`` the angle at
    which agent i sees the other, and ``leader`` (F,) with the leader index.
    """
    cols = {k: [] for k in ("V", "r_w", "theta_w", "d_ij", "phi_ij", "psi", "leader")}
    n_agents = None
    for seg in _segments(data):
        if seg.n_frames < 2:
            continue
        n_agents = seg.n_agents if n_agents is None else n_agents
        if seg.n_agents != n_agents:
            raise MetricsError("segments disagree on the number of agents")
        u = seg.positions[1:]
        v = seg.velocities()
        cols["V"].append(np.hypot(v[..., 0], v[..., 1]))
        cols["r_w"].append(radius - np.hypot(u[..., 0], u[..., 1]))
        cols["theta_w"].append(np.degrees(incidence_rad(u, v)))
        if n_agents == 2:
            phi = headings_rad(v)
            d = np.hypot(*(u[:, 0] - u[:, 1]).T)
            # relative heading from cross and dot products: exact for (anti)parallel motion
            va, vb = v[:, 0], v[:, 1]
            dphi = np.arctan2(va[:, 0] * vb[:, 1] - va[:, 1] * vb[:, 0], va[:, 0] * vb[:, 0] + va[:, 1] * vb[:, 1])
            dphi = np.where(dphi == -np.pi, np.pi, dphi)
            dphi = np.where(np.isnan(phi[:, 0]) | np.isnan(phi[:, 1]), np.nan, dphi)
            psi01 = viewing_rad(u[:, 0], phi[:, 0], u[:, 1])
            psi10 = viewing_rad(u[:, 1], phi[:, 1], u[:, 0])
            psi = np.degrees(np.column_stack([psi01, psi10]))
            a0, a1 = np.abs(psi01), np.abs(psi10)
            # ties (|psi_01| == |psi_10|) go to the lower index
            leader = np.where(a1 > a0, 1, 0)
            cols["d_ij"].append(d)
            # reversed ordering; negation is exact, except that 180 maps to itself
            rev = np.where(dphi == np.pi, np.pi, -dphi)
            cols["phi_ij"].append(np.degrees(np.column_stack([dphi, rev])))
            cols["psi"].append(psi)
            cols["leader"].append(leader)
    if n_agents is None:
        raise MetricsError("no segment has two or more frames")
    out = {k: np.concatenate(v) for k, v in cols.items() if v}
    out["n_agents"] = n_agents
    return out


def _role_values(values, leader):
    idx = np.arange(len(leader))
    return values[idx, leader], values[idx, 1 - leader]


def instantaneous_pdfs(data, radius=25.0, bins=None, roles=True, collective=True):
    """Histograms of the six instantaneous variables, keyed by name.

    Role variants are keyed ``<name>_leader`` and ``<name>_follower``.
    """
    bins = {**DEFAULT_BINS, **(bins or {})}
    obs = frame_observables(data, radius)
    if collective and obs["n_agents"] != 2:
        raise MetricsError("collective observables need pair data")
    out = {}
    for name in ("V", "r_w", "theta_w"):
        out[name] = histogram(obs[name].ravel(), *bins[name])
        if roles and obs["n_agents"] == 2:
            lead, follow = _role_values(obs[name], obs["leader"])
            out[name + "_leader"] = histogram(lead, *bins[name])
            out[name + "_follower"] = histogram(follow, *bins[name])
    if collective:
        out["d_ij"] = histogram(obs["d_ij"], *bins["d_ij"])
        out["phi_ij"] = histogram(obs["phi_ij"].ravel(), *bins["phi_ij"])
        out["psi_ij"] = histogram(obs["psi"].ravel(), *bins["psi_ij"])
        if roles:
            lead, follow = _role_values(obs["psi"], obs["leader"])
            out["psi_ij_leader"] = histogram(lead, *bins["psi_ij"])
            out["psi_ij_follower"] = histogram(follow, *bins["psi_ij"])
    return out


def _correlate(series, max_lag, product):
    """Pooled ``<product(x[t+k], x[t])>`` over all series for k = 0..max_lag.

    ``series`` is a list of (T, ...) arrays; NaN products are skipped.
    """
    sums = np.zeros(max_lag + 1)
    counts = np.zeros(max_lag + 1, dtype=np.int64)
    for x in series:
        T = len(x)
        if T <= max_lag:
            # only series longer than the max lag contribute, so every lag
            # averages over the same population
            continue
        for k in range(max_lag + 1):
            vals = product(x[k:], x[: T - k])
            ok = np.isfinite(vals)
            sums[k] += vals[ok].sum()
            counts[k] += int(ok.sum())
    return sums, counts


def _curve(sums, counts, dt):
    valid = np.flatnonzero(counts > 0)
    if len(valid) == 0 or counts[0] == 0:
        raise EmptyCurveError("no segment is long enough for the requested lags")
    stop = valid[-1] + 1
    if np.any(counts[:stop] == 0):
        stop = int(np.flatnonzero(counts == 0)[0])
    return CorrelationCurve(dt * np.arange(stop), sums[:stop] / counts[:stop], counts[:stop])


def _lags(data, max_lag_s):
    segs = [s for s in _segments(data) if s.n_frames >= 2]
    if not segs:
        raise EmptyCurveError("no segment has two or more frames")
    dt = segs[0].dt
    return segs, dt, int(round(max_lag_s / dt))


def _min_length_check(segs, max_lag, offset=0):
    if max(s.n_frames - offset for s in segs) <= max_lag:
        raise EmptyCurveError(f"max lag of {max_lag} ticks exceeds every segment")


def msd(data, max_lag_s=25.0) -> CorrelationCurve:
    """Mean squared displacement ``<|u(t + t') - u(t')|^2>``."""
    segs, dt, K = _lags(data, max_lag_s)
    _min_length_check(segs, K, offset=1)
    series = [s.positions[1:, a] for s in segs for a in range(s.n_agents)]
    sums, counts = _correlate(series, K, lambda x, y: np.sum((x - y) ** 2, axis=-1))
    return _curve(sums, counts, dt)


def velocity_autocorrelation(data, max_lag_s=25.0) -> CorrelationCurve:
    """``<v(t + t') . v(t')>``."""
    segs, dt, K = _lags(data, max_lag_s)
    _min_length_check(segs, K, offset=1)
    series = [s.velocities()[:, a] for s in segs for a in range(s.n_agents)]
    sums, counts = _correlate(series, K, lambda x, y: np.sum(x * y, axis=-1))
    return _curve(sums, counts, dt)


def incidence_autocorrelation(data, max_lag_s=25.0) -> CorrelationCurve:
    """``<cos(theta_w(t + t') - theta_w(t'))>``; frames with undefined theta_w are skipped."""
    segs, dt, K = _lags(data, max_lag_s)
    _min_length_check(segs, K, offset=1)
    series = [incidence_rad(s.positions[1:, a], s.velocities()[:, a]) for s in segs for a in range(s.n_agents)]
    sums, counts = _correlate(series, K, lambda x, y: np.cos(x - y))
    return _curve(sums, counts, dt)


def summary(data, radius=25.0) -> SummaryStats:
    """Means and standard deviations per observable, overall and split by leader and follower role."""
    obs = frame_observables(data, radius)
    if obs["n_agents"] != 2:
        raise MetricsError("summary statistics need pair data")

    def ms(x):
        x = np.asarray(x, dtype=float).ravel()
        x = x[np.isfinite(x)]
        return (float(np.mean(x)), float(np.std(x))) if len(x) else (math.nan, math.nan)

    table = {}
    for name in ("V", "r_w", "theta_w"):
        lead, follow = _role_values(obs[name], obs["leader"])
        table[name] = {"pair": ms(obs[name]), "leader": ms(lead), "follower": ms(follow)}
    table["d_ij"] = {"pair": ms(obs["d_ij"])}
    # the two orderings cancel row by row, so the pooled mean is exactly 0
    phi = obs["phi_ij"]
    phi = phi[np.all(np.isfinite(phi), axis=1)]
    mean = float(np.mean(phi.sum(axis=1))) / 2
    table["phi_ij"] = {"pair": (mean, math.sqrt(max(float(np.mean(phi**2)) - mean**2, 0.0)))}
    lead, follow = _role_values(obs["psi"], obs["leader"])
    table["psi_ij"] = {"pair": ms(obs["psi"]), "leader": ms(lead), "follower": ms(follow)}
    return SummaryStats(table)


def compare(hist_a: Histogram, hist_b: Histogram) -> float:
    """Total-variation distance between two densities on the same bins."""
    if hist_a.edges.shape != hist_b.edges.shape or not np.allclose(hist_a.edges, hist_b.edges, rtol=0, atol=1e-12):
        raise MetricsError("histograms have different bin edges")
    return float(0.5 * np.sum(np.abs(hist_a.density - hist_b.density) * hist_a.widths))


def curve_gap(a: CorrelationCurve, b: CorrelationCurve, max_lag_s=None) -> float:
    """Mean absolute difference over the common lags (optionally up to ``max_lag_s``)."""
    n = min(len(a.values), len(b.values))
    if max_lag_s is not None:
        n = min(n, int(np.sum(a.lags[:n] <= max_lag_s + 1e-9)))
    return float(np.mean(np.abs(a.values[:n] - b.values[:n])))


def count_modes(hist: Histogram, smooth=5, prominence=0.05) -> int:
    """Number of peaks in a moving-average smoothed density.

    A peak counts when it rises above both neighboring troughs by more than
    ``prominence`` times the global maximum.
    """
    kernel = np.ones(smooth) / smooth
    y = np.convolve(np.pad(hist.density, smooth // 2, mode="edge"), kernel, mode="valid")
    threshold = prominence * y.max()
    modes = 0
    low = y[0]
    peak = None
    for val in y[1:]:
        if peak is None:
            if val > low + threshold:
                peak = val
            low = min(low, val)
        else:
            if val > peak:
                peak = val
            elif val < peak - threshold:
                modes += 1
                low = val
                peak = None
    if peak is not None:
        modes += 1
    return modes


def write_histogram_csv(path, hist: Histogram):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "density"])
        for c, d in zip(hist.centers, hist.density):
            w.writerow([repr(float(c)), repr(float(d))])


def write_curve_csv(path, curve: CorrelationCurve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag_s", "value", "count"])
        for t, v, n in zip(curve.lags, curve.values, curve.counts):
            w.writerow([repr(float(round(t, 9))), repr(float(v)), int(n)])


def read_histogram_csv(path, bins):
    lo, hi, n = bins
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    edges = np.linspace(lo, hi, n + 1)
    if len(rows) != n:
        raise MetricsError(f"{path}: expected {n} bins, found {len(rows)}")
    return Histogram(edges, rows[:, 1], 0)


def validate(data, out_dir, radius=25.0, max_lag_s=25.0, bins=None):
    """Write the nine observable files, role variants and a summary report.

    Returns the dict of histograms and curves.
    """
    out_dir = Path(out_dir)
    (out_dir / "roles").mkdir(parents=True, exist_ok=True)
    pdfs = instantaneous_pdfs(data, radius, bins)
    for name, hist in pdfs.items():
        target = out_dir / f"pdf_{name}.csv" if name in OBSERVABLES else out_dir / "roles" / f"pdf_{name}.csv"
        write_histogram_csv(target, hist)
    curves = {
        "msd": msd(data, max_lag_s),
        "vacf": velocity_autocorrelation(data, max_lag_s),
        "theta_w_corr": incidence_autocorrelation(data, max_lag_s),
    }
    for name, curve in curves.items():
        write_curve_csv(out_dir / f"corr_{name}.csv", curve)
    report = summary(data, radius).flat()
    report["frames"] = sum(max(s.n_frames - 1, 0) for s in _segments(data))
    write_kv(out_dir / "report.txt", report)
    return {**pdfs, **curves}
