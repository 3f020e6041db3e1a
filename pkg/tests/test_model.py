import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbolab.model import (
    CboParams,
    CertificationError,
    ObjectiveSpec,
    certify_objective,
    kappa,
    make_cutoff,
    quadratic_objective,
    required_lambda,
)
from conftest import make_benchmark_params

BENCH_KAPPA = 9.445560967194755
BENCH_REQUIRED = 3.9341130741902983


def test_quadratic_objective_values():
    obj = quadratic_objective(np.array([1.0, -2.0]), scale=3.0)
    x = np.array([[1.0, -2.0], [2.0, 0.0]])
    np.testing.assert_allclose(obj(x), [0.0, 3.0 * (1.0 + 4.0)])
    assert obj.dim == 2
    assert obj.e_min == 0.0


def test_quadratic_objective_scalar_input_1d():
    obj = quadratic_objective(0.5)
    np.testing.assert_allclose(obj(np.array([0.5, 1.5])), [0.0, 1.0])


def test_certify_objective_accepts_honest_constants():
    obj = quadratic_objective(0.0)
    report = certify_objective(obj, np.zeros(1), 1.0, n_samples=5000)
    assert report["growth_margin"] >= -1e-9
    assert report["grad_norm_at_minimizer"] <= 1e-6


def test_certify_objective_rejects_inflated_growth_constant():
    base = quadratic_objective(0.0)
    lying = ObjectiveSpec(
        dim=1, eval=base.eval, minimizer=base.minimizer,
        e_min=0.0, c_e=2.0, ell_e=2.0,
    )
    with pytest.raises(CertificationError):
        certify_objective(lying, np.zeros(1), 1.0, n_samples=5000)


def test_certify_objective_rejects_wrong_minimizer():
    base = quadratic_objective(0.0)
    shifted = ObjectiveSpec(
        dim=1, eval=base.eval, minimizer=np.array([0.3]),
        e_min=0.0, c_e=1.0, ell_e=2.0,
    )
    with pytest.raises(CertificationError):
        certify_objective(shifted, np.zeros(1), 1.0, n_samples=5000)


def test_cutoff_plateau_and_support():
    bump = make_cutoff(np.zeros(1), 0.5)
    assert bump(np.array([0.0])) == pytest.approx(1.0)
    assert bump(np.array([0.49])) == pytest.approx(1.0)
    assert bump(np.array([1.01])) == pytest.approx(0.0, abs=1e-12)
    assert 0.0 < float(bump(np.array([0.75]))) < 1.0


def test_cutoff_derivatives_vanish_on_plateau_and_outside():
    bump = make_cutoff(np.zeros(1), 0.5)
    for k in range(1, 7):
        np.testing.assert_allclose(bump.deriv1d(np.array([0.0, 0.3, 1.2]), k), 0.0, atol=1e-30)


def test_cutoff_deriv1d_matches_finite_difference():
    bump = make_cutoff(np.zeros(1), 0.5)
    xs = np.linspace(0.55, 0.95, 9)
    h = 1e-6
    fd = (bump.deriv1d(xs + h, 0) - bump.deriv1d(xs - h, 0)) / (2 * h)
    np.testing.assert_allclose(bump.deriv1d(xs, 1), fd, rtol=1e-5, atol=1e-7)


def test_cutoff_constants_scale_invariant():
    # r^k max|d^k phi| must not depend on the radius
    consts = [make_cutoff(np.zeros(1), r).derivative_constants for r in (0.25, 0.5, 2.0)]
    for other in consts[1:]:
        np.testing.assert_allclose(other, consts[0], rtol=1e-8)


def test_cutoff_gradient_radial_direction():
    bump = make_cutoff(np.zeros(2), 0.5)
    x = np.array([[0.5, 0.5]])
    g = bump.grad(x)[0]
    # gradient points inward along the radius in the transition region
    assert g @ x[0] < 0
    np.testing.assert_allclose(g[0], g[1])


def test_params_validation():
    with pytest.raises(ValueError):
        make_benchmark_params(lambda_=0.0)
    with pytest.raises(ValueError):
        make_benchmark_params(alpha=-0.1)
    make_benchmark_params(alpha=0.0)  # plain mean consensus is allowed
    with pytest.raises(ValueError):
        make_benchmark_params(n_particles=1)
    with pytest.raises(ValueError):
        make_benchmark_params(snapshot_times=(0.0, 0.3))
    with pytest.raises(ValueError):
        make_benchmark_params(snapshot_times=(0.1, 0.1))


def test_required_lambda_benchmark_value():
    p = make_benchmark_params()
    obj = quadratic_objective(0.0)
    assert required_lambda(p, obj) == pytest.approx(BENCH_REQUIRED, rel=1e-12)


def test_kappa_benchmark_value_and_gate():
    p = make_benchmark_params()
    obj = quadratic_objective(0.0)
    k = kappa(p, obj)
    assert float(k) == pytest.approx(BENCH_KAPPA, abs=1e-9)
    assert not k.below_gate
    weak = kappa(make_benchmark_params(lambda_=0.1), obj)
    assert weak.below_gate


def test_kappa_formula_direct():
    p = make_benchmark_params()
    obj = quadratic_objective(0.0)
    expected = 2.0 * (p.lambda_ - p.dim * p.sigma**2 * np.exp(9.0 * p.alpha * obj.c_e * p.r_cut**2))
    assert float(kappa(p, obj)) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(
    lam=st.floats(0.5, 20.0),
    sig=st.floats(0.0, 1.0),
    alpha=st.floats(0.0, 3.0),
)
def test_kappa_monotone_in_lambda_and_sigma(lam, sig, alpha):
    obj = quadratic_objective(0.0)
    p = make_benchmark_params(lambda_=lam, sigma=sig, alpha=alpha)
    p_more_drift = make_benchmark_params(lambda_=lam + 1.0, sigma=sig, alpha=alpha)
    assert float(kappa(p_more_drift, obj)) > float(kappa(p, obj))
    p_more_noise = make_benchmark_params(lambda_=lam, sigma=sig + 0.5, alpha=alpha)
    assert float(kappa(p_more_noise, obj)) < float(kappa(p, obj))
