import numpy as np
import pytest
from hypothesis import given, strategies as st

from fishinteract.ingest import (ConfigurationError, DatasetTooSmallError, IngestPipeline,
                                 OutOfArenaError, denormalize, fill_gaps, normalize, remove_inactive,
                                 remove_leaps, resample, runs, split)
from fishinteract.trajio import Dataset, RawTrajectory, Trajectory

BL = 3.5


def straight(T, speed_bl=2.0, dt=0.04):
    # two agents moving in parallel lines at a constant speed, wrapped on a ring
    step = speed_bl * BL * dt
    ang = step * np.arange(T) / 15.0
    a = np.stack([15 * np.cos(ang), 15 * np.sin(ang)], -1)
    b = np.stack([10 * np.cos(ang * 1.5), 10 * np.sin(ang * 1.5)], -1)
    return np.stack([a, b], axis=1)


def test_inactive_constant_speed_unchanged():
    cut = remove_inactive(straight(300), BL, 0.04)
    assert not cut.any()


def test_inactive_frozen_interval():
    pos = straight(300)
    pos[100:201, 0] = pos[100, 0]
    cut = remove_inactive(pos, BL, 0.04)
    segs = runs(~cut)
    assert len(segs) == 2
    assert cut[101:201].all() and not cut[:101].any() and not cut[201:].any()


def test_inactive_everything_slow():
    cut = remove_inactive(straight(50, speed_bl=0.5), BL, 0.04)
    assert cut[1:].all()
    assert len(runs(~cut[1:])) == 0


@pytest.mark.parametrize("jump,removed", [(5.26, True), (5.24, False)])
def test_leap_threshold(jump, removed):
    pos = np.zeros((5, 1, 2))
    pos[:, 0, 0] = [0, 0.5, 1.0, 1.0 + jump, 1.5 + jump]
    flagged = remove_leaps(pos, BL)
    assert flagged[3] == removed


def test_leaps_small_steps_unchanged():
    pos = np.zeros((20, 2, 2))
    pos[:, :, 0] = 0.5 * np.arange(20)[:, None]
    before = pos.copy()
    assert not remove_leaps(pos, BL).any()
    np.testing.assert_array_equal(pos, before)


def test_fill_midpoint():
    pos = np.array([[[0.0, 0.0]], [[np.nan, np.nan]], [[2.0, 0.0]]])
    out, complete = fill_gaps(pos)
    np.testing.assert_allclose(out[1, 0], [1, 0])
    assert complete.all()


def test_fill_long_gap_splits():
    pos = np.zeros((9, 1, 2))
    pos[3:6] = np.nan
    out, complete = fill_gaps(pos, max_gap=2)
    assert len(runs(complete)) == 2


def test_fill_identity():
    pos = np.random.default_rng(0).normal(size=(10, 2, 2))
    out, complete = fill_gaps(pos)
    np.testing.assert_array_equal(out, pos)


@pytest.mark.parametrize("n,expected", [(9, 3), (1, 1), (10, 3)])
def test_resample_counts(n, expected):
    seg = Trajectory(np.zeros((n, 2, 2)), 0.04)
    out = resample(seg, 0.12)
    assert out.n_frames == expected and out.dt == 0.12


def test_resample_bad_ratio():
    with pytest.raises(ConfigurationError):
        resample(Trajectory(np.zeros((9, 2, 2)), 0.04), 0.10)


def test_normalize_examples():
    seg = Trajectory(np.array([[[25.0, 0.0], [0.0, 0.0]], [[-12.5, 12.5], [0.0, 0.0]]]), 0.12)
    ds = normalize([seg], 25.0)
    np.testing.assert_allclose(ds.segments[0].positions, [[[1, 0], [0, 0]], [[-0.5, 0.5], [0, 0]]])
    assert ds.scale == 25.0


def test_normalize_out_of_arena():
    seg = Trajectory(np.array([[[0.0, 0.0], [0.0, 0.0]], [[26.0, 0.0], [0.0, 0.0]]]), 0.12)
    with pytest.raises(OutOfArenaError, match="frames 1"):
        normalize([seg], 25.0)


@given(st.lists(st.floats(-17, 17), min_size=4, max_size=40))
def test_normalize_round_trip(xs):
    pos = np.array(xs[: len(xs) // 4 * 4]).reshape(-1, 2, 2)
    ds = normalize([Trajectory(pos, 0.12)], 25.0)
    assert np.all(np.abs(ds.segments[0].positions) <= 1)
    np.testing.assert_allclose(denormalize(ds)[0].positions, pos, atol=1e-9, rtol=0)


def _equal_segments(n):
    return Dataset([Trajectory(np.zeros((10, 2, 2)), 0.12, run_id=str(k)) for k in range(n)])


def test_split_100_segments():
    tr, va, te = split(_equal_segments(100), (0.8, 0.15, 0.05), seed=3)
    assert (len(tr.segments), len(va.segments), len(te.segments)) == (80, 15, 5)
    ids = [s.run_id for part in (tr, va, te) for s in part.segments]
    assert sorted(ids) == sorted(str(k) for k in range(100))


def test_split_all_train():
    tr, va, te = split(_equal_segments(5), (1, 0, 0))
    assert len(tr.segments) == 5 and not va.segments and not te.segments


def test_split_errors():
    with pytest.raises(ValueError):
        split(_equal_segments(5), (0.5, 0.5, 0.5))
    with pytest.raises(DatasetTooSmallError):
        split(_equal_segments(2), (0.8, 0.15, 0.05))


def test_split_deterministic():
    a = split(_equal_segments(30), seed=7)
    b = split(_equal_segments(30), seed=7)
    assert [[s.run_id for s in p.segments] for p in a] == [[s.run_id for s in p.segments] for p in b]


def noisy_recording(seed, T=3000):
    rng = np.random.default_rng(seed)
    pos = straight(T, speed_bl=2.5) + rng.normal(0, 0.02, (T, 2, 2))
    pos[500:560, 1] = pos[500, 1]                      # resting fish
    pos[900, 0] += [6.0, 0.0]                          # glitch, repaired by interpolation
    pos[1999, 0] += [6.0, 0.0]                         # glitch next to a long dropout
    pos[1500:1503] = np.nan                            # short dropout
    pos[2000:2020] = np.nan                            # long dropout
    times = 0.04 * np.arange(T)
    keep = np.ones(T, dtype=bool)
    keep[2005:2010] = False                            # rows missing from the file
    return RawTrajectory(times[keep], pos[keep], run_id=f"r{seed}")


def test_pipeline_invariants():
    pipe = IngestPipeline(seed=0)
    ds = pipe.transform([noisy_recording(0), noisy_recording(1)])
    prov = pipe.provenance_
    assert prov["frames_in"] == prov["out"] + prov["removed_inactive"] + prov["removed_leap"] + prov["boundary_dropped"]
    assert prov["removed_inactive"] > 0 and prov["removed_leap"] == 2
    assert sum(s.n_frames for s in pipe.segments_cm_) == prov["out"]
    for seg in pipe.segments_cm_:
        step = np.linalg.norm(np.diff(seg.positions, axis=0), axis=-1)
        assert np.all(step <= 1.5 * BL)
        assert np.all(step / seg.dt >= BL)
        assert seg.dt == 0.12
    assert all(np.all(np.abs(s.positions) <= 1) for s in ds.segments)
    assert ds.scale == 25.0


def test_pipeline_deterministic():
    a = IngestPipeline().transform([noisy_recording(2)])
    b = IngestPipeline().transform([noisy_recording(2)])
    assert len(a.segments) == len(b.segments)
    for x, y in zip(a.segments, b.segments):
        np.testing.assert_array_equal(x.positions, y.positions)


def test_pipeline_params():
    pipe = IngestPipeline(body_length=4.0)
    assert pipe.get_params()["body_length"] == 4.0
    with pytest.raises(ConfigurationError):
        IngestPipeline(dt=0.1).fit()
