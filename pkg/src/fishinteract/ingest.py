"""Cleaning pipeline for raw tracking data.

Order of operations: inactivity removal, leap removal, gap filling,
resampling, normalization. Every frame of the regular source-rate grid ends
up in exactly one fate bucket (``out``, ``inactive``, ``leap``, ``dropped``),
so the provenance counts always add up to the input frame count.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import ArenaSpec
from .trajio import Dataset, RawTrajectory, Trajectory

OUT, INACTIVE, LEAP, DROPPED = 0, 1, 2, 3
FATE_NAMES = {OUT: "out", INACTIVE: "removed_inactive", LEAP: "removed_leap", DROPPED: "boundary_dropped"}


class ConfigurationError(ValueError):
    pass


class OutOfArenaError(ValueError):
    def __init__(self, frames, radius):
        self.frames = list(frames)
        shown = ", ".join(str(f) for f in self.frames[:20])
        more = "" if len(self.frames) <= 20 else f" (+{len(self.frames) - 20} more)"
        super().__init__(f"positions outside the arena of radius {radius}: frames {shown}{more}")


class DatasetTooSmallError(ValueError):
    pass


def resample_ratio(source_dt: float, target_dt: float) -> int:
    ratio = target_dt / source_dt
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(
            f"target timestep {target_dt} is not an integer multiple of {source_dt}"
        )
    return int(k)


def to_grid(raw: RawTrajectory, source_dt: float | None = None):
    """Place a recording on its regular source-rate grid (missing frames are NaN)."""
    times = raw.times
    if source_dt is None:
        source_dt = float(np.median(np.diff(times))) if len(times) > 1 else 0.04
    idx = np.round((times - times[0]) / source_dt).astype(int)
    grid = np.full((idx[-1] + 1, raw.positions.shape[1], 2), np.nan)
    grid[idx] = raw.positions
    return grid, float(times[0]), source_dt


def _speeds(positions, dt):
    # Speed of frame k relative to k-1; NaN for k = 0 or missing data.
    sp = np.full(positions.shape[:2], np.nan)
    sp[1:] = np.linalg.norm(np.diff(positions, axis=0), axis=-1) / dt
    return sp


def remove_inactive(positions, body_length, dt, fate=None):
    """Mask frames where either agent moves slower than one body length per second.

    Returns the boolean ``cut`` mask; cut frames separate segments.
    """
    sp = _speeds(positions, dt)
    with np.errstate(invalid="ignore"):
        cut = np.any(sp < body_length, axis=1)
    if fate is not None:
        fate[cut & (fate == OUT)] = INACTIVE
    return cut


def remove_leaps(positions, body_length, cut=None, fate=None, factor=1.5):
    """NaN out positions reached by a jump longer than ``factor`` body lengths.

    The jump is measured from the agent's last accepted frame, allowing
    ``factor * body_length`` per elapsed frame, so a single glitch frame does
    not also condemn the frame after it. Operates in place.
    """
    T, N, _ = positions.shape
    limit = factor * body_length
    flagged = np.zeros(T, dtype=bool)
    for a in range(N):
        last = None
        for k in range(T):
            if cut is not None and cut[k]:
                last = None
                continue
            p = positions[k, a]
            if np.isnan(p[0]):
                continue
            if last is not None:
                step = math.hypot(p[0] - positions[last, a, 0], p[1] - positions[last, a, 1])
                if step > limit * (k - last):
                    positions[k, a] = np.nan
                    flagged[k] = True
                    continue
            last = k
    if fate is not None:
        fate[flagged & (fate == OUT)] = LEAP
    return flagged


def fill_gaps(positions, cut=None, max_gap=5):
    """Linearly interpolate interior NaN runs of at most ``max_gap`` frames.

    Returns ``(positions, complete)`` where ``complete`` marks frames with all
    agents present after filling. Longer runs and runs touching a cut or an
    edge stay missing and therefore split the data.
    """
    positions = positions.copy()
    T, N, _ = positions.shape
    cut = np.zeros(T, dtype=bool) if cut is None else cut
    for a in range(N):
        missing = np.isnan(positions[:, a, 0]) & ~cut
        k = 0
        while k < T:
            if not missing[k]:
                k += 1
                continue
            start = k
            while k < T and missing[k]:
                k += 1
            lo, hi = start - 1, k
            if (
                k - start <= max_gap
                and lo >= 0
                and hi < T
                and not cut[lo]
                and not cut[hi]
                and not np.isnan(positions[lo, a, 0])
                and not np.isnan(positions[hi, a, 0])
            ):
                w = (np.arange(start, k) - lo)[:, None] / (hi - lo)
                positions[start:k, a] = (1 - w) * positions[lo, a] + w * positions[hi, a]
    complete = np.all(np.isfinite(positions), axis=(1, 2)) & ~cut
    return positions, complete


def runs(mask):
    """(start, stop) pairs of maximal True runs."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(m.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def resample(segment: Trajectory, target_dt: float) -> Trajectory:
    """Keep every k-th frame so the step becomes ``target_dt``."""
    k = resample_ratio(segment.dt, target_dt)
    n = max(segment.n_frames // k, 1) if segment.n_frames else 0
    return Trajectory(segment.positions[: n * k : k], target_dt, segment.t0, segment.run_id)


def normalize(segments, radius: float, arena: ArenaSpec | None = None, provenance=None) -> Dataset:
    """Map positions into [-1, 1] by dividing by the arena radius."""
    bad = []
    offset = 0
    for seg in segments:
        r = np.hypot(seg.positions[..., 0], seg.positions[..., 1])
        bad.extend((offset + np.flatnonzero(np.any(r > radius, axis=1))).tolist())
        offset += seg.n_frames
    if bad:
        raise OutOfArenaError(bad, radius)
    out = [Trajectory(s.positions / radius, s.dt, s.t0, s.run_id) for s in segments]
    return Dataset(out, arena or ArenaSpec(radius=radius), scale=radius, provenance=dict(provenance or {}))


def denormalize(dataset: Dataset) -> list:
    return [Trajectory(s.positions * dataset.scale, s.dt, s.t0, s.run_id) for s in dataset.segments]


def split(dataset: Dataset, fractions=(0.8, 0.15, 0.05), seed=0):
    """Assign whole segments to train/validation/test by frame count.

    Segments are shuffled with ``seed`` and then laid end to end; each goes to
    the set whose cumulative-fraction interval contains its midpoint.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    segs = dataset.segments
    order = np.random.default_rng(seed).permutation(len(segs))
    sizes = np.array([segs[i].n_frames for i in order], dtype=float)
    total = sizes.sum()
    if total == 0:
        raise DatasetTooSmallError("dataset is empty")
    mid = (np.cumsum(sizes) - sizes / 2) / total
    bounds = np.cumsum(fractions)
    which = np.searchsorted(bounds[:2], mid, side="right")
    parts = []
    for s, frac in enumerate(fractions):
        chosen = [segs[i] for i, w in zip(order, which) if w == s]
        if frac > 0 and not chosen:
            raise DatasetTooSmallError(f"too few segments to populate set {s} with fraction {frac}")
        parts.append(Dataset(chosen, dataset.arena, dataset.scale, dict(dataset.provenance)))
    return tuple(parts)


def chunk(dataset: Dataset, length: int) -> Dataset:
    """Cut every segment into pieces of ``length`` frames (the remainder is kept if long enough)."""
    out = []
    for seg in dataset.segments:
        for start in range(0, seg.n_frames, length):
            piece = seg.positions[start : start + length]
            if len(piece) >= 2:
                out.append(Trajectory(piece, seg.dt, seg.t0 + start * seg.dt, seg.run_id))
    return Dataset(out, dataset.arena, dataset.scale, dict(dataset.provenance))


class IngestPipeline(TransformerMixin, BaseEstimator):
    """Clean, resample and normalize raw recordings.

    ``transform`` takes a list of :class:`RawTrajectory` and returns a
    normalized :class:`Dataset`; the cm-scale segments of the last call are
    kept in ``segments_cm_`` and the frame accounting in ``provenance_``.
    """

    def __init__(self, body_length=3.5, radius=25.0, dt=0.12, source_dt=0.04,
                 max_gap=5, min_frames=2, leap_factor=1.5, seed=0):
        self.body_length = body_length
        self.radius = radius
        self.dt = dt
        self.source_dt = source_dt
        self.max_gap = max_gap
        self.min_frames = min_frames
        self.leap_factor = leap_factor
        self.seed = seed

    def fit(self, X=None, y=None):
        resample_ratio(self.source_dt, self.dt)
        ArenaSpec(self.radius, self.body_length, self.dt)
        self.ratio_ = resample_ratio(self.source_dt, self.dt)
        return self

    def clean_run(self, raw: RawTrajectory):
        """Clean one recording; returns (cm segments, fate counts)."""
        k = resample_ratio(self.source_dt, self.dt)
        grid, t0, src_dt = to_grid(raw, self.source_dt)
        T = grid.shape[0]
        fate = np.full(T, OUT, dtype=np.int8)

        cut = remove_inactive(grid, self.body_length, src_dt, fate)
        positions = grid.copy()
        positions[cut] = np.nan
        remove_leaps(positions, self.body_length, cut, fate, self.leap_factor)
        positions, complete = fill_gaps(positions, cut, self.max_gap)
        # leap frames repaired by interpolation are ordinary frames again
        fate[complete & (fate == LEAP)] = OUT
        fate[~complete & (fate == OUT)] = DROPPED

        segments = []
        for start, stop in runs(complete):
            seg = Trajectory(positions[start:stop], src_dt, t0 + start * src_dt, raw.run_id)
            kept = np.arange(start, stop)[: (stop - start) // k * k : k]
            if len(kept) == 0:
                kept = np.array([start])
            fate[start:stop][np.isin(np.arange(start, stop), kept, invert=True)] = DROPPED
            coarse = resample(seg, self.dt)
            segments.extend(self._enforce(coarse, kept, fate))
        counts = {name: int(np.sum(fate == code)) for code, name in FATE_NAMES.items()}
        counts["frames_in"] = T
        return segments, counts

    def _enforce(self, seg, grid_index, fate):
        # Re-check both thresholds at the output rate and split where violated.
        pos = seg.positions
        if len(pos) > 1:
            step = np.linalg.norm(np.diff(pos, axis=0), axis=-1)
            slow = np.zeros(len(pos), dtype=bool)
            leap = np.zeros(len(pos), dtype=bool)
            slow[1:] = np.any(step / seg.dt < self.body_length, axis=1)
            leap[1:] = np.any(step > self.leap_factor * self.body_length, axis=1)
            fate[grid_index[slow]] = INACTIVE
            fate[grid_index[leap & ~slow]] = LEAP
            keep = ~(slow | leap)
        else:
            keep = np.ones(len(pos), dtype=bool)
        out = []
        for start, stop in runs(keep):
            if stop - start < self.min_frames:
                fate[grid_index[start:stop]] = DROPPED
                continue
            out.append(Trajectory(pos[start:stop], seg.dt, seg.t0 + start * seg.dt, seg.run_id))
        return out

    def transform(self, X):
        if not hasattr(self, "ratio_"):
            self.fit()
        segments = []
        totals = {"frames_in": 0, "out": 0, "removed_inactive": 0, "removed_leap": 0, "boundary_dropped": 0}
        for raw in X:
            segs, counts = self.clean_run(raw)
            segments.extend(segs)
            for key in totals:
                totals[key] += counts[key]
        totals["segments"] = len(segments)
        self.segments_cm_ = segments
        self.provenance_ = totals
        arena = ArenaSpec(self.radius, self.body_length, self.dt)
        return normalize(segments, self.radius, arena, totals)
