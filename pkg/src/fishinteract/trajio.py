"""Trajectory containers, the ``t,agent,x,y`` CSV format and key-value sidecars."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ArenaSpec

HEADER = "t,agent,x,y"


class TrajectoryFormatError(ValueError):
    """Malformed trajectory file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class EmptyDatasetError(TrajectoryFormatError):
    pass


@dataclass
class Trajectory:
    """One contiguous, uniformly sampled segment.

    ``positions`` has shape (T, N, 2) in cm; frame k is at ``t0 + k * dt``.
    """

    positions: np.ndarray
    dt: float
    t0: float = 0.0
    run_id: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError(f"positions must be (T, N, 2), got {self.positions.shape}")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_frames)

    def velocities(self) -> np.ndarray:
        """Backward-difference velocities for frames 1..T-1, shape (T-1, N, 2)."""
        return np.diff(self.positions, axis=0) / self.dt


@dataclass
class RawTrajectory:
    """Recording as loaded from disk; missing (t, agent) rows are NaN."""

    times: np.ndarray
    positions: np.ndarray
    run_id: str = ""
    species: str = ""

    @property
    def frame_rate(self) -> float:
        if len(self.times) < 2:
            return float("nan")
        return 1.0 / float(np.median(np.diff(self.times)))

    @property
    def duration(self) -> float:
        if len(self.times) == 0:
            return 0.0
        return len(self.times) / self.frame_rate


@dataclass
class Dataset:
    segments: list
    arena: ArenaSpec = field(default_factory=ArenaSpec)
    scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return sum(s.n_frames for s in self.segments)


def _slow_parse(path, lines):
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise TrajectoryFormatError(f"expected 4 fields, got {len(parts)}", path, lineno)
        try:
            t, agent, x, y = float(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise TrajectoryFormatError(f"cannot parse row: {exc}", path, lineno) from None
        rows.append((t, agent, x, y))
    return np.array(rows, dtype=float).reshape(-1, 4)


def load_csv(path, run_id=None, species="") -> RawTrajectory:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if not text.strip():
        raise EmptyDatasetError("empty trajectory file", path)
    header = lines[0].strip()
    if header != HEADER:
        raise TrajectoryFormatError(f"bad header {header!r}, expected {HEADER!r}", path, 1)
    try:
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        if data.size and data.shape[1] != 4:
            raise ValueError
    except ValueError:
        data = _slow_parse(path, lines)
    if data.shape[0] == 0:
        raise EmptyDatasetError("trajectory file has no rows", path)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0])
        raise TrajectoryFormatError("non-finite value", path, _data_line(lines, bad))

    t = data[:, 0]
    back = np.flatnonzero(np.diff(t) < 0)
    if back.size:
        raise TrajectoryFormatError("time is not monotonic", path, _data_line(lines, int(back[0]) + 1))
    agents = data[:, 1]
    if np.any(agents < 0) or np.any(agents != np.round(agents)):
        bad = int(np.flatnonzero((agents < 0) | (agents != np.round(agents)))[0])
        raise TrajectoryFormatError("agent id must be a non-negative integer", path, _data_line(lines, bad))
    agents = agents.astype(int)

    times, frame_idx = np.unique(t, return_inverse=True)
    n_agents = int(agents.max()) + 1
    positions = np.full((len(times), n_agents, 2), np.nan)
    if np.any(np.bincount(frame_idx * n_agents + agents) > 1):
        dup = np.flatnonzero(np.bincount(frame_idx * n_agents + agents) > 1)[0]
        raise TrajectoryFormatError(
            f"duplicate row for agent {dup % n_agents} at t={times[dup // n_agents]}", path
        )
    positions[frame_idx, agents] = data[:, 2:4]
    return RawTrajectory(times, positions, run_id=run_id or path.stem, species=species)


def _data_line(lines, row):
    # Row index among data rows to 1-based file line, skipping blank lines.
    count = -1
    for lineno, line in enumerate(lines[1:], start=2):
        if line.strip():
            count += 1
            if count == row:
                return lineno
    return None


def split_on_gaps(raw: RawTrajectory, dt=None, run_id=None) -> list:
    """Cut a loaded file into contiguous, complete segments."""
    times = raw.times
    if len(times) == 0:
        return []
    if dt is None:
        dt = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    complete = np.all(np.isfinite(raw.positions), axis=(1, 2))
    breaks = np.flatnonzero(np.diff(times) > 1.5 * dt) + 1
    segments = []
    for chunk in np.split(np.arange(len(times)), breaks):
        start = None
        for k in list(chunk) + [None]:
            ok = k is not None and complete[k]
            if ok and start is None:
                start = k
            elif not ok and start is not None:
                stop = k if k is not None else chunk[-1] + 1
                segments.append(
                    Trajectory(raw.positions[start:stop], dt, float(times[start]), run_id or raw.run_id)
                )
                start = None
    return segments


def read_segments(path, dt=None) -> list:
    raw = load_csv(path)
    return split_on_gaps(raw, dt)


def format_rows(segments) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    for seg in segments:
        T, N, _ = seg.positions.shape
        t = np.repeat(seg.times, N)
        agent = np.tile(np.arange(N), T)
        xy = seg.positions.reshape(-1, 2)
        block = np.column_stack([t, agent, xy])
        np.savetxt(buf, block, fmt=("%.6f", "%d", "%.12g", "%.12g"), delimiter=",")
    return buf.getvalue()


def write_csv(path, segments, force=True):
    path = Path(path)
    if not force and path.exists():
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    if isinstance(segments, Trajectory):
        segments = [segments]
    path.write_text(format_rows(segments), encoding="utf-8", newline="\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return repr(value) if math.isfinite(value) else str(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def dump_kv(mapping) -> str:
    return "".join(f"{key} = {_fmt(value)}\n" for key, value in mapping.items())


def write_kv(path, mapping, force=True):
    path = Path(path)
    if not force and path.exists():
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    path.write_text(dump_kv(mapping), encoding="utf-8", newline="\n")


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TrajectoryFormatError("expected 'key = value'", path, lineno)
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
