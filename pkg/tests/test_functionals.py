import numpy as np
import pytest

from cbolab.functionals import (
    FunctionalSpec,
    check_regularity,
    check_translation_invariance,
    eval_phi,
    linear_derivative,
    pair_second,
    translate,
)
from cbolab.measures import EmpiricalMeasure, GridDensity, QuadratureSpec


def _random_measures(count, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(3, 12))
        pts = rng.uniform(-0.8, 0.8, size=(n, 1))
        w = rng.uniform(0.1, 1.0, n)
        out.append(EmpiricalMeasure(pts, w / w.sum()))
    return out


def _gateaux(spec, mu, y, eps):
    pts = np.vstack([mu.points, [[y]]])
    w = np.concatenate([(1.0 - eps) * mu.weights, [eps]])
    mixed = EmpiricalMeasure(pts, w / w.sum())
    return (eval_phi(spec, mixed) - eval_phi(spec, mu)) / eps


FW = FunctionalSpec.centered_fw(4.5, QuadratureSpec(64.0, 2048))
VAR = FunctionalSpec.variance()
MOM = FunctionalSpec.centered_moment(
    g=lambda x: np.cos(x[..., 0]),
    g_derivs=(
        lambda x: -np.sin(x[..., 0]),
        lambda x: -np.cos(x[..., 0]),
        lambda x: np.sin(x[..., 0]),
        lambda x: np.cos(x[..., 0]),
    ),
)


def test_spec_validation():
    with pytest.raises(ValueError):
        FunctionalSpec(kind="nope")
    with pytest.raises(ValueError):
        FunctionalSpec.centered_fw(3.0)  # needs s > 4 in 1D
    with pytest.raises(ValueError):
        FunctionalSpec(kind="centered_moment")


def test_variance_eval_matches_measure_variance():
    for mu in _random_measures(5):
        assert eval_phi(VAR, mu) == pytest.approx(mu.variance())


def test_fw_eval_zero_on_dirac():
    d = EmpiricalMeasure.dirac(np.array([0.3]))
    assert eval_phi(FW, d) == pytest.approx(0.0, abs=1e-12)


def test_translation_invariance_admissible():
    for mu in _random_measures(20, seed=4):
        assert check_translation_invariance(VAR, mu) <= 1e-6
        assert check_translation_invariance(FW, mu) <= 1e-6
        assert check_translation_invariance(MOM, mu) <= 1e-6


def test_translation_invariance_rejects_raw_mean():
    # the plain first moment shifts one-for-one under translation
    probe = lambda mu: float(mu.mean()[0])
    for mu in _random_measures(5, seed=9):
        assert check_translation_invariance(probe, mu) >= 0.5


def test_eval_phi_invariant_under_translate():
    for mu in _random_measures(4, seed=2):
        shifted = translate(mu, 0.17)
        for spec in (VAR, FW, MOM):
            assert eval_phi(spec, shifted) == pytest.approx(eval_phi(spec, mu), abs=1e-10)


@pytest.mark.parametrize("spec", [VAR, FW, MOM], ids=["variance", "fw", "moment"])
def test_linear_derivative_matches_gateaux(spec):
    mu = _random_measures(1, seed=7)[0]
    ys = np.array([-0.5, 0.1, 0.6])
    lin = linear_derivative(spec, mu, ys)
    for y, expected in zip(ys, lin):
        eps_small, eps_big = 1e-4, 2e-4
        g_small = _gateaux(spec, mu, float(y), eps_small)
        g_big = _gateaux(spec, mu, float(y), eps_big)
        # Richardson check: the Gateaux quotient converges linearly in eps
        err_small = abs(g_small - expected)
        err_big = abs(g_big - expected)
        assert err_small <= 0.75 * err_big + 1e-8


def test_variance_linear_derivative_closed_form():
    mu = _random_measures(1, seed=1)[0]
    m = float(mu.mean()[0])
    ys = np.linspace(-0.5, 0.5, 7)
    np.testing.assert_allclose(
        linear_derivative(VAR, mu, ys),
        (ys - m) ** 2 - mu.variance(),
        rtol=1e-12,
    )
    np.testing.assert_allclose(linear_derivative(VAR, mu, ys, order=1), 2.0 * (ys - m))
    np.testing.assert_allclose(linear_derivative(VAR, mu, ys, order=2), 2.0)
    np.testing.assert_allclose(linear_derivative(VAR, mu, ys, order=5), 0.0)


@pytest.mark.parametrize("spec", [FW, MOM], ids=["fw", "moment"])
def test_higher_y_derivatives_match_finite_difference(spec):
    mu = _random_measures(1, seed=3)[0]
    ys = np.linspace(-0.4, 0.4, 5)
    h = 1e-4 if spec is MOM else 1e-5
    for order in (1, 2):
        up = linear_derivative(spec, mu, ys + h, order=order - 1)
        dn = linear_derivative(spec, mu, ys - h, order=order - 1)
        fd = (up - dn) / (2.0 * h)
        got = linear_derivative(spec, mu, ys, order=order)
        np.testing.assert_allclose(got, fd, rtol=5e-3, atol=5e-4)


def test_linear_derivative_integrates_to_zero_against_mu():
    # the normalized linear derivative has zero mu-average
    mu = _random_measures(1, seed=5)[0]
    for spec in (VAR, FW, MOM):
        vals = linear_derivative(spec, mu, mu.points[:, 0])
        assert float(mu.weights @ vals) == pytest.approx(0.0, abs=1e-6)


def test_pair_second_variance_closed_form():
    mu = _random_measures(1, seed=6)[0]
    m = float(mu.mean()[0])
    y1 = np.array([0.1, -0.3])
    y2 = np.array([0.2])
    got = pair_second(VAR, mu, y1, y2)
    np.testing.assert_allclose(got, -2.0 * np.outer(y1 - m, y2 - m), rtol=1e-12)


def test_pair_second_bilinear_pairing_oracle():
    # pairing the kernel against two zero-mass perturbations must equal the
    # mixed second difference of Phi itself
    mu = _random_measures(1, seed=8)[0]
    z1, z2 = 0.25, -0.35
    eps = 2e-3

    def mix2(e1, e2):
        pts = np.vstack([mu.points, [[z1]], [[z2]]])
        w = np.concatenate([(1.0 - e1 - e2) * mu.weights, [e1], [e2]])
        return EmpiricalMeasure(pts, w / w.sum())

    for spec, tol in ((VAR, 1e-5), (FW, 1e-2)):
        f = lambda e1, e2: eval_phi(spec, mix2(e1, e2))
        mixed_fd = (
            f(eps, eps) - f(eps, 0.0) - f(0.0, eps) + f(0.0, 0.0)
        ) / eps**2
        # the mixed difference pairs the kernel against the zero-mass
        # perturbations (delta_z1 - mu) x (delta_z2 - mu); reproduce that
        # pairing from the kernel by removing the first-slot mu-average
        probe = np.concatenate([[z1], mu.points[:, 0]])
        col = pair_second(spec, mu, probe, np.array([z2]))[:, 0]
        paired = col[0] - float(mu.weights @ col[1:])
        assert abs(mixed_fd - paired) <= tol * max(1.0, abs(paired))


def test_check_regularity_reports_finite_bounds():
    report = check_regularity(FW, _random_measures(3, seed=10), np.linspace(-0.5, 0.5, 9))
    assert report.per_order.shape == (7,)
    assert np.all(np.isfinite(report.per_order))
    assert report.overall >= report.per_order[0]
    assert report.within_declared is None


def test_check_regularity_declared_bound():
    spec = FunctionalSpec(kind="variance", c_phi=1e9)
    report = check_regularity(spec, _random_measures(2, seed=11), np.linspace(-0.5, 0.5, 5))
    assert report.within_declared is True
