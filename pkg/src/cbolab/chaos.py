"""Propagation-of-chaos experiments: weak error vs N and joint (N, t) decay.

All studies simulate independent replicas of the N-particle system with
counter-based RNG streams, evaluate a functional or metric per replica and
snapshot, and fit rates with confidence intervals.  The mean-field reference
in 1D is the grid solver flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .dynamics import run_batch
from .functionals import FunctionalSpec, eval_phi
from .measures import EmpiricalMeasure, QuadratureSpec
from .meanfield import DensityFlow
from .model import CboParams, CutoffBump, ObjectiveSpec

__all__ = [
    "WeakErrorStudy",
    "JointDecayStudy",
    "uniform_sampler",
    "weak_error_study",
    "joint_decay_study",
    "fit_loglog",
]


def uniform_sampler(lo: float, hi: float, dim: int = 1):
    """i.i.d. uniform initial-condition sampler on a box."""

    def sample(rng: np.random.Generator, shape):
        return rng.uniform(lo, hi, size=shape + (dim,))

    return sample


def fit_loglog(xs, ys):
    """OLS slope of log(ys) vs log(xs) with a 95% CI half-width.

    Requires at least 3 strictly positive points.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(xs), np.log(ys)
    n = xs.size
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    slope, intercept = float(coef[0]), float(coef[1])
    if n == 2 or res.size == 0:
        return slope, intercept, float("inf")
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    s2 = float(res[0]) / (n - 2)
    half = stats.t.ppf(0.975, n - 2) * np.sqrt(s2 / sxx)
    return slope, intercept, float(half)


def _phi_per_replica(phi: FunctionalSpec, states: np.ndarray) -> np.ndarray:
    """Functional value per replica for a batch of ensembles (R, N, d)."""
    if phi.kind == "variance":
        diff = states - states.mean(axis=1, keepdims=True)
        return np.sum(diff**2, axis=-1).mean(axis=1)
    return np.array([
        eval_phi(phi, EmpiricalMeasure.from_points(states[r]))
        for r in range(states.shape[0])
    ])


@dataclass(frozen=True)
class WeakErrorStudy:
    functional: FunctionalSpec
    n_list: np.ndarray
    replicas: int
    t_grid: np.ndarray
    reference_values: np.ndarray
    errors: np.ndarray  # (len(n_list), len(t_grid)) |E Phi - ref|
    stderrs: np.ndarray
    sup_errors: np.ndarray
    sup_stderrs: np.ndarray
    slope: float | None
    slope_ci: float | None
    intercept: float | None
    inconclusive: bool


def weak_error_study(
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    init_sampler,
    phi: FunctionalSpec,
    n_list,
    replicas: int,
    seed: int,
    reference: DensityFlow,
) -> WeakErrorStudy:
    """Uniform-in-time weak error |E Phi(nu^N_t) - Phi(ref_t)| versus N.

    Snapshots follow p.snapshot_times, which must match the reference flow's
    grid.  Each N gets its own disjoint RNG stream; replica means carry
    standard errors, and the log-log slope of the per-N sup errors is fitted
    when at least three N values are available.
    """
    t_grid = np.atleast_1d(np.asarray(p.snapshot_times, dtype=float))
    if t_grid.size != len(reference.times) or np.max(np.abs(t_grid - reference.times)) > 1e-9:
        raise ValueError("reference flow snapshots do not match p.snapshot_times")
    ref_vals = np.array([eval_phi(phi, g) for g in reference.densities])
    n_list = np.asarray(sorted(int(n) for n in n_list))
    errors = np.empty((n_list.size, t_grid.size))
    stderrs = np.empty_like(errors)
    rng = np.random.default_rng(seed)
    for i, n in enumerate(n_list):
        pts = init_sampler(rng, (replicas, int(n)))
        acc = {}

        def cb(j, t, states):
            vals = _phi_per_replica(phi, states)
            acc[j] = (vals.mean(), vals.std(ddof=1) / np.sqrt(replicas))

        run_batch(p, obj, bump, pts, seed=seed, stream=i + 1, snapshot_callback=cb)
        for j in range(t_grid.size):
            mean, se = acc[j]
            errors[i, j] = abs(mean - ref_vals[j])
            stderrs[i, j] = se
    sup_idx = errors.argmax(axis=1)
    sup_errors = errors[np.arange(n_list.size), sup_idx]
    sup_stderrs = stderrs[np.arange(n_list.size), sup_idx]
    inconclusive = bool(np.any(sup_stderrs * 2 > sup_errors))
    slope = ci = intercept = None
    if n_list.size >= 3 and np.all(sup_errors > 0):
        slope, intercept, ci = fit_loglog(n_list, sup_errors)
    return WeakErrorStudy(
        functional=phi,
        n_list=n_list,
        replicas=replicas,
        t_grid=t_grid,
        reference_values=ref_vals,
        errors=errors,
        stderrs=stderrs,
        sup_errors=sup_errors,
        sup_stderrs=sup_stderrs,
        slope=slope,
        slope_ci=ci,
        intercept=intercept,
        inconclusive=inconclusive,
    )


def _fw_sq_per_replica(states: np.ndarray, s: float, quad: QuadratureSpec, chunk: int = 32) -> np.ndarray:
    """Squared centered (-s,2) distance to delta_0 per replica, 1D batches.

    Exploits the even symmetry of the integrand: only the positive half of
    the frequency grid is evaluated and doubled.
    """
    xi, w = quad.nodes_weights()
    pos = xi > 0
    xi_p, w_p = xi[pos], 2.0 * w[pos]
    weight = w_p * (1.0 + xi_p**2) ** (-s)
    r, n, d = states.shape
    if d != 1:
        raise ValueError("fw metric implemented for d = 1")
    out = np.empty(r)
    for a in range(0, r, chunk):
        x = states[a:a + chunk, :, 0]
        centered = x - x.mean(axis=1, keepdims=True)
        arg = 2.0 * np.pi * centered[:, :, np.newaxis] * xi_p
        av = np.cos(arg).mean(axis=1)
        bv = np.sin(arg).mean(axis=1)
        out[a:a + chunk] = ((av - 1.0) ** 2 + bv**2) @ weight
    return out


@dataclass(frozen=True)
class JointDecayStudy:
    metric: str
    n_list: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray  # (len(n_list), len(t_grid)) E[dist^2]
    stderrs: np.ndarray
    fit_c: float | None
    fit_rate: float | None
    theory_rate: float
    early_rate: float | None
    plateau_slope: float | None
    plateau_slope_ci: float | None
    pass_rate: bool
    pass_plateau: bool


def joint_decay_study(
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    init_sampler,
    metric: str,
    n_list,
    replicas: int,
    seed: int,
    theory_rate: float,
    s: float = 4.5,
    quad: QuadratureSpec | None = None,
    slack: float = 0.15,
) -> JointDecayStudy:
    """E[dist^2(centered nu^N_t, delta_0)] over the (N, t) grid with fits.

    metric "w2" uses the variance identity W2(centered mu, delta_0)^2 = Var;
    metric "fw" evaluates the truncated frequency quadrature per replica.
    Fits: the early-time decay rate at the largest N (on values at least
    10x above that N's plateau), the large-t plateau slope across N, and
    the two-term model C (1/N + e^{-rate t}) seeded at the theory rate.
    """
    if metric not in ("w2", "fw"):
        raise ValueError("metric must be 'w2' or 'fw'")
    quad = quad or QuadratureSpec()
    t_grid = np.atleast_1d(np.asarray(p.snapshot_times, dtype=float))
    n_list = np.asarray(sorted(int(n) for n in n_list))
    values = np.empty((n_list.size, t_grid.size))
    stderrs = np.empty_like(values)
    rng = np.random.default_rng(seed)
    for i, n in enumerate(n_list):
        pts = init_sampler(rng, (replicas, int(n)))

        def cb(j, t, states):
            if metric == "w2":
                diff = states - states.mean(axis=1, keepdims=True)
                vals = np.sum(diff**2, axis=-1).mean(axis=1)
            else:
                vals = _fw_sq_per_replica(states, s, quad)
            values[i, j] = vals.mean()
            stderrs[i, j] = vals.std(ddof=1) / np.sqrt(replicas)

        run_batch(p, obj, bump, pts, seed=seed, stream=1000 + i, snapshot_callback=cb)

    # early-time decay rate at the largest N
    big = values[-1]
    tail_n = max(t_grid.size // 5, 2)
    plateau = float(big[-tail_n:].mean())
    keep = big > 10.0 * plateau
    early_rate = None
    if keep.sum() >= 3:
        sl, _ = np.polyfit(t_grid[keep], np.log(big[keep] - plateau), 1)
        early_rate = float(-sl)

    # plateau scaling across N at the final time
    plateau_slope = plateau_ci = None
    if n_list.size >= 3:
        finals = values[:, -tail_n:].mean(axis=1)
        if np.all(finals > 0):
            plateau_slope, _, plateau_ci = fit_loglog(n_list, finals)

    # two-term model on the whole grid, rate seeded at theory
    fit_c = fit_rate = None
    try:
        nn = np.repeat(n_list.astype(float), t_grid.size)
        tt = np.tile(t_grid, n_list.size)
        yy = values.ravel()

        def model(x, c, rate):
            return c * (1.0 / x[0] + np.exp(-rate * x[1]))

        popt, _ = optimize.curve_fit(
            model, np.vstack([nn, tt]), yy, p0=[max(yy.max(), 1e-12), theory_rate],
            maxfev=10000,
        )
        fit_c, fit_rate = float(popt[0]), float(popt[1])
    except Exception:
        pass

    pass_rate = early_rate is not None and early_rate >= theory_rate * (1.0 - slack)
    pass_plateau = plateau_slope is not None and -1.3 <= plateau_slope <= -0.7
    return JointDecayStudy(
        metric=metric,
        n_list=n_list,
        t_grid=t_grid,
        values=values,
        stderrs=stderrs,
        fit_c=fit_c,
        fit_rate=fit_rate,
        theory_rate=float(theory_rate),
        early_rate=early_rate,
        plateau_slope=plateau_slope,
        plateau_slope_ci=plateau_ci,
        pass_rate=bool(pass_rate),
        pass_plateau=bool(pass_plateau),
    )
