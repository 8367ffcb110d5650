import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import circle_track
from fishinteract import metrics
from fishinteract.burst_coast import BurstCoastModel
from fishinteract.trajio import Trajectory


@pytest.fixture(scope="module")
def abc():
    return BurstCoastModel().trajectory(4000, seed=11)


def mirrored_pair(steps=60):
    # start points mirrored through the center, identical straight velocities
    t = 0.12 * np.arange(steps)[:, None]
    v = np.array([4.0, 1.0])
    a = np.array([-10.0, 6.0]) + t * v
    b = np.array([10.0, -6.0]) + t * v
    return Trajectory(np.stack([a, b], axis=1), 0.12)


def opposed_on_circle(steps=300):
    # both agents on one circle, diametrically opposed, same rotation sense
    one, _ = circle_track(r0=20.0, steps=steps)
    a = one.positions[:, 0]
    return Trajectory(np.stack([a, -a], axis=1), one.dt)


def test_histograms_integrate_to_one(abc):
    for name, h in metrics.instantaneous_pdfs(abc).items():
        assert h.integral() == pytest.approx(1.0, abs=1e-9), name
        assert np.all(h.density >= 0)


def test_parallel_pair_alignment_point_mass():
    phi = metrics.instantaneous_pdfs(mirrored_pair())["phi_ij"]
    assert np.count_nonzero(phi.density) == 1
    assert phi.edges[np.flatnonzero(phi.density)[0]] == 0.0


def test_circle_r_w_point_mass():
    traj, _ = circle_track(r0=20.0, steps=300, n_agents=2)
    h = metrics.instantaneous_pdfs(traj, collective=False)["r_w"]
    assert np.count_nonzero(h.density) == 1
    lo = h.edges[np.flatnonzero(h.density)[0]]
    assert lo <= 5.0 < lo + 0.5


def test_single_agent_collective_error():
    traj, _ = circle_track(steps=50)
    with pytest.raises(metrics.MetricsError):
        metrics.instantaneous_pdfs(traj)
    assert "V" in metrics.instantaneous_pdfs(traj, collective=False)


def test_roles_partition(abc):
    pdfs = metrics.instantaneous_pdfs(abc)
    frames = abc.n_frames - 1
    for name in ("V", "r_w", "theta_w", "psi_ij"):
        lead, follow = pdfs[name + "_leader"], pdfs[name + "_follower"]
        assert lead.samples == follow.samples == frames
        assert lead.samples + follow.samples == pdfs[name].samples


def test_summary_layout(abc):
    s = metrics.summary(abc)
    assert set(s.table) == {"V", "r_w", "theta_w", "d_ij", "phi_ij", "psi_ij"}
    assert set(s.table["V"]) == {"pair", "leader", "follower"}
    assert s.table["phi_ij"]["pair"][0] == 0.0
    assert all(std >= 0 for roles in s.table.values() for _, std in roles.values())


def test_summary_point_mass_zero_std():
    s = metrics.summary(opposed_on_circle())
    for q, roles in s.table.items():
        for role, (_, std) in roles.items():
            assert std == pytest.approx(0.0, abs=1e-6), (q, role)
    assert s.table["phi_ij"]["pair"][0] == pytest.approx(180.0)


def test_circle_joint_oracle():
    traj, omega = circle_track(r0=20.0, speed=10.0, steps=10_000)
    cx = metrics.msd(traj)
    cv = metrics.velocity_autocorrelation(traj)
    ct = metrics.incidence_autocorrelation(traj)
    t = cx.lags
    assert np.max(np.abs(cx.values - 2 * 20.0**2 * (1 - np.cos(omega * t)))) < 1e-6
    assert np.max(np.abs(cv.values - 100.0 * np.cos(omega * t))) < 1e-6
    assert np.max(np.abs(ct.values - 1.0)) < 1e-6
    assert np.all(np.diff(t) > 0) and np.all(cx.counts > 0)
    assert t[-1] == pytest.approx(25.0, abs=0.06)


def test_straight_motion():
    dt, v = 0.12, 4.0
    x = v * dt * np.arange(400)
    traj = Trajectory(np.stack([np.column_stack([x - 20, np.zeros(400)])], axis=1), dt)
    cx = metrics.msd(traj, max_lag_s=10)
    cv = metrics.velocity_autocorrelation(traj, max_lag_s=10)
    np.testing.assert_allclose(cx.values, v**2 * cx.lags**2, rtol=0, atol=1e-9)
    np.testing.assert_allclose(cv.values, v**2, rtol=0, atol=1e-9)
    assert cx.values[0] == 0.0


def test_identities_on_abc(abc):
    cv = metrics.velocity_autocorrelation(abc)
    speeds = metrics.frame_observables(abc)["V"]
    assert cv.values[0] == pytest.approx(np.mean(speeds**2), rel=0, abs=1e-9)
    assert metrics.msd(abc).values[0] == 0.0
    assert metrics.incidence_autocorrelation(abc).values[0] == pytest.approx(1.0, abs=1e-12)


def test_iid_incidence_decorrelates(rng):
    # velocities at random angles to a fixed radial position give i.i.d. uniform theta_w
    T = 100_001
    ang = rng.uniform(-np.pi, np.pi, T - 1)
    pos = np.zeros((T, 1, 2))
    pos[0, 0] = (10.0, 0.0)
    for k in range(1, T):
        # alternate back and forth so positions stay near (10, 0)
        step = 0.01 * np.array([np.cos(ang[k - 1]), np.sin(ang[k - 1])])
        pos[k, 0] = pos[0, 0] + step if k % 2 else pos[0, 0]
    traj = Trajectory(pos, 0.12)
    theta = metrics.frame_observables(traj)["theta_w"][:, 0]
    curve = metrics.incidence_autocorrelation(traj, max_lag_s=2.4)
    assert curve.values[0] == pytest.approx(1.0)
    # odd frames leave from the anchor at the drawn angle; they are independent
    assert np.all(np.abs(curve.values[2::2]) < 0.02)
    assert np.isfinite(theta).all()


def test_empty_curve_error():
    traj, _ = circle_track(steps=30)
    with pytest.raises(metrics.EmptyCurveError):
        metrics.msd(traj, max_lag_s=25)


def test_short_segments_do_not_contribute(abc):
    short = Trajectory(abc.positions[:40], abc.dt)
    a = metrics.msd([abc], max_lag_s=5)
    b = metrics.msd([abc, short], max_lag_s=5)
    np.testing.assert_array_equal(a.values, b.values)


def test_stationarity_doubling(abc):
    segs = [Trajectory(abc.positions[:2000], abc.dt), Trajectory(abc.positions[2000:], abc.dt)]
    once, twice = segs, segs + segs
    for fn in (metrics.msd, metrics.velocity_autocorrelation, metrics.incidence_autocorrelation):
        np.testing.assert_allclose(fn(twice).values, fn(once).values, rtol=0, atol=1e-12)
    pa, pb = metrics.instantaneous_pdfs(once), metrics.instantaneous_pdfs(twice)
    for name in pa:
        np.testing.assert_allclose(pb[name].density, pa[name].density, rtol=0, atol=1e-12)
    sa, sb = metrics.summary(once).flat(), metrics.summary(twice).flat()
    for key in sa:
        assert sb[key] == pytest.approx(sa[key], abs=1e-9)


def test_compare_examples():
    edges = np.linspace(0, 1, 5)
    a = metrics.Histogram(edges, np.array([4.0, 0, 0, 0]), 1)
    b = metrics.Histogram(edges, np.array([0, 0, 0, 4.0]), 1)
    assert metrics.compare(a, a) == 0.0
    assert metrics.compare(a, b) == pytest.approx(1.0)
    with pytest.raises(metrics.MetricsError):
        metrics.compare(a, metrics.Histogram(np.linspace(0, 2, 5), b.density, 1))


@given(st.lists(st.floats(0, 35), min_size=1, max_size=50), st.lists(st.floats(0, 35), min_size=1, max_size=50))
def test_compare_symmetric_bounded(xs, ys):
    a, b = metrics.histogram(xs, 0, 35, 70), metrics.histogram(ys, 0, 35, 70)
    d = metrics.compare(a, b)
    assert d == metrics.compare(b, a)
    assert 0 <= d <= 1 + 1e-12


def test_count_modes():
    centers = np.linspace(0, 35, 71)
    edges = centers
    one = np.exp(-0.5 * ((edges[:-1] - 10) / 3) ** 2)
    two = one + np.exp(-0.5 * ((edges[:-1] - 25) / 3) ** 2)
    assert metrics.count_modes(metrics.Histogram(edges, one, 1)) == 1
    assert metrics.count_modes(metrics.Histogram(edges, two, 1)) == 2


def test_validate_outputs(abc, tmp_path):
    metrics.validate(abc, tmp_path / "v")
    files = sorted(p.name for p in (tmp_path / "v").iterdir() if p.is_file())
    assert len([f for f in files if f != "report.txt"]) == 9
    assert (tmp_path / "v" / "pdf_V.csv").read_text().splitlines()[0] == "bin_center,density"
    assert (tmp_path / "v" / "corr_msd.csv").read_text().splitlines()[0] == "lag_s,value,count"
    h = metrics.read_histogram_csv(tmp_path / "v" / "pdf_V.csv", metrics.DEFAULT_BINS["V"])
    assert h.integral() == pytest.approx(1.0, abs=1e-9)
