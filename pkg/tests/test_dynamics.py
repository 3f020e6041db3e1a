import numpy as np
import pytest

from cbolab.dynamics import (
    run_batch,
    simulate,
    step_noise,
    tangent_flow_s,
    tangent_flow_y,
)
from cbolab.measures import EmpiricalMeasure
from cbolab.model import make_cutoff, quadratic_objective
from conftest import make_benchmark_params


def _init(n=16, seed=0, lo=-0.4, hi=0.4):
    rng = np.random.default_rng(seed)
    return EmpiricalMeasure.from_points(rng.uniform(lo, hi, size=(n, 1)))


def test_step_noise_reproducible_and_order_free():
    a = step_noise(7, 3, 100, (4, 2))
    b = step_noise(7, 3, 100, (4, 2))
    np.testing.assert_array_equal(a, b)
    # different streams and steps decorrelate
    assert not np.allclose(a, step_noise(7, 4, 100, (4, 2)))
    assert not np.allclose(a, step_noise(7, 3, 101, (4, 2)))


def test_simulate_reproducible(benchmark_obj, benchmark_bump):
    p = make_benchmark_params(horizon=0.05, snapshot_times=(0.0, 0.05), n_particles=8)
    init = _init(8)
    a = simulate(p, benchmark_obj, benchmark_bump, init, seed=1)
    b = simulate(p, benchmark_obj, benchmark_bump, init, seed=1)
    for (ta, ma), (tb, mb) in zip(a.snapshots, b.snapshots):
        assert ta == tb
        np.testing.assert_array_equal(ma.points, mb.points)


def test_simulate_particle_permutation_invariance(benchmark_obj, benchmark_bump):
    # permuting particles together with their stream ids leaves the
    # empirical measure invariant
    p = make_benchmark_params(horizon=0.02, snapshot_times=(0.02,), n_particles=6)
    init = _init(6)
    perm = np.array([2, 0, 5, 1, 4, 3])
    permuted = EmpiricalMeasure.from_points(init.points[perm])
    a = simulate(p, benchmark_obj, benchmark_bump, init, seed=9)
    b = simulate(p, benchmark_obj, benchmark_bump, permuted, seed=9, stream_ids=perm)
    xa = np.sort(a.snapshots[-1][1].points[:, 0])
    xb = np.sort(b.snapshots[-1][1].points[:, 0])
    np.testing.assert_allclose(xa, xb, rtol=1e-12)


def test_simulate_rejects_bad_init(benchmark_obj, benchmark_bump):
    p = make_benchmark_params(n_particles=4)
    outside = EmpiricalMeasure.from_points(np.array([[0.0], [0.9], [0.1], [0.2]]))
    with pytest.raises(ValueError):
        simulate(p, benchmark_obj, benchmark_bump, outside, seed=0)
    with pytest.raises(ValueError):
        simulate(p, benchmark_obj, benchmark_bump, _init(4), seed=0, stream_ids=[0, 0, 1, 2])


def test_zero_noise_contraction_rate(benchmark_bump):
    # sigma = 0, alpha = 0: every particle contracts toward the frozen mean,
    # so the spread obeys gap_{k+1} = gap_k (1 - lambda dt) exactly
    obj = quadratic_objective(0.0)
    dt = 1e-3
    p = make_benchmark_params(sigma=0.0, alpha=0.0, dt=dt, horizon=10 * dt,
                              snapshot_times=(0.0, 10 * dt), n_particles=2)
    init = EmpiricalMeasure.from_points(np.array([[-0.2], [0.4]]))
    path = simulate(p, obj, benchmark_bump, init, seed=0)
    gap0 = 0.6
    gap = float(np.ptp(path.snapshots[-1][1].points[:, 0]))
    assert gap == pytest.approx(gap0 * (1.0 - p.lambda_ * dt) ** 10, rel=1e-12)


def test_confinement_post_clamp(benchmark_obj, benchmark_bump):
    # violent noise: every recorded snapshot still sits inside B(c0, 2 r_cut)
    p = make_benchmark_params(sigma=16.0, dt=4e-3, horizon=0.2,
                              snapshot_times=tuple(np.linspace(0, 0.2, 6)),
                              n_particles=128)
    path = simulate(p, benchmark_obj, benchmark_bump, _init(128), seed=2)
    for _, snap in path.snapshots:
        assert np.all(np.abs(snap.points) <= 2 * p.r_cut + 1e-12)
    assert path.clamp_events > 0


def test_run_batch_matches_single_stream_layout(benchmark_obj, benchmark_bump):
    # replica r of a batch uses noise rows r*N..(r+1)*N-1, so a batch of one
    # replica equals the plain order of the same block
    p = make_benchmark_params(horizon=0.01, snapshot_times=(0.01,), n_particles=5)
    init = _init(5, seed=3)
    got = {}

    def cb(i, t, states):
        got[i] = states.copy()

    run_batch(p, benchmark_obj, benchmark_bump, init.points[None], seed=4, stream=0,
              snapshot_callback=cb)
    single = simulate(p, benchmark_obj, benchmark_bump, init, seed=4)
    np.testing.assert_allclose(got[0][0], single.snapshots[-1][1].points, rtol=1e-12)


def test_run_batch_replica_independence(benchmark_obj, benchmark_bump):
    p = make_benchmark_params(horizon=0.01, snapshot_times=(0.01,), n_particles=4)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.4, 0.4, size=(3, 4, 1))
    full = {}
    run_batch(p, benchmark_obj, benchmark_bump, pts, seed=5, stream=2,
              snapshot_callback=lambda i, t, s: full.update({i: s.copy()}))
    # changing replica 0's start must not perturb replica 2
    pts2 = pts.copy()
    pts2[0] += 0.01
    part = {}
    run_batch(p, benchmark_obj, benchmark_bump, pts2, seed=5, stream=2,
              snapshot_callback=lambda i, t, s: part.update({i: s.copy()}))
    np.testing.assert_allclose(part[0][2], full[0][2], rtol=1e-12)
    assert not np.allclose(part[0][0], full[0][0])


def test_overshoot_halves_with_dt(benchmark_obj, benchmark_bump):
    # clamp events at dt versus dt/2 over the same horizon: ratio >= 1
    kw = dict(sigma=16.0, horizon=0.2, snapshot_times=(0.2,), n_particles=256)
    p1 = make_benchmark_params(dt=4e-3, **kw)
    p2 = make_benchmark_params(dt=2e-3, **kw)
    init = _init(256, seed=8)
    c1 = simulate(p1, benchmark_obj, benchmark_bump, init, seed=6).clamp_events
    c2 = simulate(p2, benchmark_obj, benchmark_bump, init, seed=6).clamp_events
    assert c1 >= 1
    assert c1 / max(c2, 1) >= 1.0


def test_tangent_flow_y_first_derivative_is_exact_exponential(benchmark_bump):
    # the drift is integrated exactly, so E[dY/dx] = e^{-lambda(u-t)} holds
    # up to Monte Carlo error only
    res = tangent_flow_y(5.0, 0.3, benchmark_bump, 0.0, t=0.0, x=0.75,
                         u_grid=[0.1, 0.3], replicas=20000, seed=11)
    for j, u in enumerate(res["u"]):
        target = np.exp(-5.0 * u)
        assert abs(res["mean_d1"][j] - target) <= 4.0 * res["se_d1"][j] + 1e-12


def test_tangent_flow_y_second_derivative_centered_at_zero(benchmark_bump):
    res = tangent_flow_y(5.0, 0.3, benchmark_bump, 0.0, t=0.0, x=0.75,
                         u_grid=[0.2], replicas=20000, seed=12)
    assert abs(res["mean_d2"][0]) <= 4.0 * res["se_d2"][0] + 1e-12


def test_tangent_flow_y_zero_noise_degenerates(benchmark_bump):
    res = tangent_flow_y(5.0, 0.0, benchmark_bump, 0.0, t=0.0, x=0.3,
                         u_grid=[0.5], replicas=4, seed=0)
    assert res["mean_d1"][0] == pytest.approx(np.exp(-2.5), rel=1e-12)
    assert res["se_d1"][0] == pytest.approx(0.0, abs=1e-15)
    assert res["mean_d2"][0] == pytest.approx(0.0, abs=1e-15)


def test_tangent_flow_s_envelope(benchmark_bump):
    # after the initial noise burst the requested moments decay at least as
    # fast as e^{-lambda (u - u0) / 2}, measured relative to the first record
    res = tangent_flow_s(5.0, 0.3, benchmark_bump, t=0.0, x=0.75,
                         u_grid=[0.05, 0.5, 1.0], replicas=20000, seed=13,
                         requests=((0, 1), (1, 1), (0, 2)))
    u0 = res["u"][0]
    for key in ("p0_b1", "p1_b1", "p0_b2"):
        base = res[f"mean_{key}"][0]
        for j in range(1, len(res["u"])):
            env = base * np.exp(-5.0 * (res["u"][j] - u0) / 2.0)
            se = res[f"se_{key}"][j]
            assert res[f"mean_{key}"][j] <= env * (1.0 + 3.0 * se / max(env, 1e-300)) + 3.0 * se


def test_tangent_flow_s_rejects_unsupported_request(benchmark_bump):
    with pytest.raises(ValueError):
        tangent_flow_s(5.0, 0.3, benchmark_bump, 0.0, 0.2, [0.1], 10, 0,
                       requests=((5, 1),))
    with pytest.raises(ValueError):
        tangent_flow_s(5.0, 0.3, benchmark_bump, 0.0, 0.2, [0.1], 10, 0,
                       requests=((0, 0),))
