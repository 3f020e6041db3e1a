import numpy as np
import pytest

from cbolab.meanfield import (
    CflError,
    NoSignalError,
    decay_diagnostics,
    estimate_limit_point,
    fpe_solve_1d,
    surrogate_reference,
)
from cbolab.measures import EmpiricalMeasure, GridDensity
from cbolab.model import kappa, quadratic_objective
from conftest import make_benchmark_params


def _solve(obj, bump, horizon=0.3, n_cells=256, support=(-0.1, 0.4), **overrides):
    p = make_benchmark_params(
        horizon=horizon,
        snapshot_times=tuple(np.linspace(0.0, horizon, 31)),
        **overrides,
    )
    init = GridDensity.uniform(-1.0, 1.0, n_cells, support=support)
    return p, fpe_solve_1d(init, p, obj, bump)


def test_mass_conservation(benchmark_obj, benchmark_bump):
    _, flow = _solve(benchmark_obj, benchmark_bump)
    for g in flow.densities:
        assert g.mass == pytest.approx(1.0, abs=1e-9)
        assert np.all(g.values >= 0.0)


def test_variance_contracts(benchmark_obj, benchmark_bump):
    _, flow = _solve(benchmark_obj, benchmark_bump)
    v = [g.variance() for g in flow.densities]
    assert v[-1] < 0.1 * v[0]


def test_consensus_and_mean_converge_together(benchmark_obj, benchmark_bump):
    _, flow = _solve(benchmark_obj, benchmark_bump, horizon=0.6)
    assert abs(flow.mean_path[-1] - flow.consensus_path[-1]) < 1e-3
    lp = estimate_limit_point(flow)
    assert lp.converged
    # the attractor sits near, but not exactly at, the minimizer
    assert abs(float(lp)) < 0.2


def test_zero_noise_pure_transport(benchmark_bump):
    # sigma = 0: the density contracts toward the consensus point and the
    # mean obeys dm/dt = -lambda (m - M)
    obj = quadratic_objective(0.0)
    p, flow = _solve(obj, benchmark_bump, sigma=0.0, horizon=0.2)
    v = [g.variance() for g in flow.densities]
    assert v[-1] < v[0]
    assert abs(flow.mean_path[-1] - flow.consensus_path[-1]) < abs(
        flow.mean_path[0] - flow.consensus_path[0]
    )


def test_cfl_error_without_substepping(benchmark_obj, benchmark_bump):
    p = make_benchmark_params(dt=5e-2, horizon=0.1, snapshot_times=(0.0, 0.1))
    init = GridDensity.uniform(-1.0, 1.0, 512, support=(-0.4, 0.4))
    with pytest.raises(CflError):
        fpe_solve_1d(init, p, benchmark_obj, benchmark_bump, auto_substep=False)


def test_init_validation(benchmark_obj, benchmark_bump):
    p = make_benchmark_params()
    bad_domain = GridDensity.uniform(-2.0, 2.0, 64)
    with pytest.raises(ValueError):
        fpe_solve_1d(bad_domain, p, benchmark_obj, benchmark_bump)
    signed = GridDensity(-1.0, 1.0, np.linspace(-1.0, 1.0, 64))
    with pytest.raises(ValueError):
        fpe_solve_1d(signed, p, benchmark_obj, benchmark_bump)


def test_density_at_lookup(benchmark_obj, benchmark_bump):
    _, flow = _solve(benchmark_obj, benchmark_bump)
    g = flow.density_at(flow.times[3])
    assert g is flow.densities[3]
    with pytest.raises(KeyError):
        flow.density_at(flow.times[3] + 0.004)


def test_decay_diagnostics_rate_above_gate(benchmark_obj, benchmark_bump):
    p, flow = _solve(benchmark_obj, benchmark_bump, horizon=1.0, n_cells=512)
    kap = float(kappa(p, benchmark_obj))
    xt = float(estimate_limit_point(flow))
    rep = decay_diagnostics(flow, xt, kap)
    assert rep.passed
    assert rep.fitted_rate_mean >= 0.85 * kap
    assert rep.fitted_rate_consensus >= 0.85 * kap


def test_decay_diagnostics_no_signal(benchmark_obj, benchmark_bump):
    # symmetric init: mean and consensus stay pinned at 0, no usable signal
    _, flow = _solve(benchmark_obj, benchmark_bump, support=(-0.4, 0.4), horizon=1.0)
    with pytest.raises(NoSignalError):
        decay_diagnostics(flow, 0.0, 9.4)


def test_grid_refinement_consistency(benchmark_obj, benchmark_bump):
    # the cell-snapped init support shifts the starting mean by O(h), so the
    # tolerance is a small multiple of the coarse cell width
    _, coarse = _solve(benchmark_obj, benchmark_bump, n_cells=128, horizon=0.2)
    _, fine = _solve(benchmark_obj, benchmark_bump, n_cells=512, horizon=0.2)
    h_coarse = 2.0 / 128
    assert abs(coarse.mean_path[-1] - fine.mean_path[-1]) < h_coarse
    assert abs(coarse.densities[-1].variance() - fine.densities[-1].variance()) < h_coarse


def test_surrogate_reference_tracks_grid_solution(benchmark_obj, benchmark_bump):
    p = make_benchmark_params(horizon=0.2, snapshot_times=(0.0, 0.1, 0.2))
    init_grid = GridDensity.uniform(-1.0, 1.0, 256, support=(-0.1, 0.4))
    flow = fpe_solve_1d(init_grid, p, benchmark_obj, benchmark_bump)
    # start the particle surrogate from the same cell-snapped measure by
    # handing it the occupied cell centers as its point cloud
    support_pts = init_grid.centers[init_grid.values > 0][:, None]
    init = EmpiricalMeasure.from_points(support_pts)
    summ = surrogate_reference(p, benchmark_obj, benchmark_bump, init,
                               n_ref=1024, replicas=64, seed=1)
    np.testing.assert_allclose(summ.times, flow.times)
    for j in range(len(summ.times)):
        tol = 5.0 * summ.mean_se[j] + 5e-3
        assert abs(summ.mean_path[j] - flow.mean_path[j]) < tol


def test_surrogate_reference_requires_large_ensemble(benchmark_obj, benchmark_bump):
    p = make_benchmark_params(n_particles=64)
    init = EmpiricalMeasure.from_points(np.zeros((4, 1)))
    with pytest.raises(ValueError):
        surrogate_reference(p, benchmark_obj, benchmark_bump, init,
                            n_ref=8, replicas=2, seed=0)
