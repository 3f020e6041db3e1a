"""Admissible test functionals on probability measures and their derivatives.

Three concrete families: the centered variance, the centered (-s,2)
Fourier-Wasserstein distance squared, and centered smooth moments
Phi(mu) = integral of g(x - mean).  All are invariant under translating the
measure, which is the compatibility condition the weak-error theory needs,
and each exposes its linear functional derivative y -> dPhi/dm(mu, y) in a
form that can be differentiated in y up to order six.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measures import (
    EmpiricalMeasure,
    GridDensity,
    Measure,
    QuadratureSpec,
    center,
    sobolev_dual_norm,
)

__all__ = [
    "FunctionalSpec",
    "RegularityReport",
    "eval_phi",
    "linear_derivative",
    "pair_second",
    "translate",
    "check_translation_invariance",
    "check_regularity",
]

MAX_REG_ORDER = 6


@dataclass(frozen=True)
class FunctionalSpec:
    """One admissible functional, identified by kind plus parameters."""

    kind: str
    s: float | None = None
    quad: QuadratureSpec | None = None
    g: Callable | None = None
    g_derivs: tuple | None = None
    c_phi: float | None = None

    def __post_init__(self):
        if self.kind not in ("variance", "centered_fw", "centered_moment"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "centered_fw":
            if self.s is None or self.s <= 4.0:
                raise ValueError("centered_fw needs smoothing order s > 4 in 1D")
            if self.quad is None:
                object.__setattr__(self, "quad", QuadratureSpec())
        if self.kind == "centered_moment" and self.g is None:
            raise ValueError("centered_moment needs the map g")

    @classmethod
    def variance(cls) -> "FunctionalSpec":
        return cls(kind="variance")

    @classmethod
    def centered_fw(cls, s: float, quad: QuadratureSpec | None = None) -> "FunctionalSpec":
        return cls(kind="centered_fw", s=s, quad=quad)

    @classmethod
    def centered_moment(cls, g, g_derivs=None) -> "FunctionalSpec":
        return cls(kind="centered_moment", g=g, g_derivs=tuple(g_derivs) if g_derivs else None)


def _mean(measure: Measure) -> np.ndarray:
    return np.atleast_1d(np.asarray(measure.mean(), dtype=float))


def translate(measure: Measure, z) -> Measure:
    """Pushforward of the measure under x -> x + z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if isinstance(measure, EmpiricalMeasure):
        return EmpiricalMeasure(measure.points + z, measure.weights)
    return GridDensity(measure.lo + float(z[0]), measure.hi + float(z[0]), measure.values)


def _moment_integral(measure: Measure, f) -> float:
    """Integral of f(x) dmu for vectorized f over (..., d) points."""
    if isinstance(measure, EmpiricalMeasure):
        return float(measure.weights @ np.asarray(f(measure.points), dtype=float))
    pts = measure.centers[:, np.newaxis]
    return float(np.dot(measure.values, np.asarray(f(pts), dtype=float)) * measure.h)


def eval_phi(spec: FunctionalSpec, measure: Measure) -> float:
    """Evaluate the functional on a probability measure."""
    if spec.kind == "variance":
        return float(measure.variance())
    if spec.kind == "centered_fw":
        mu_c = center(measure)
        delta0 = EmpiricalMeasure.dirac(np.zeros(_mean(measure).shape[0]))
        return float(sobolev_dual_norm((mu_c, delta0), spec.s, spec.quad)) ** 2
    m = _mean(measure)
    return _moment_integral(measure, lambda x: spec.g(x - m))


def _fw_trig_moments(measure: Measure, xi: np.ndarray):
    """A(xi) = int cos(2 pi xi (x-m)) dmu and B(xi) = int sin(...), 1D."""
    m = float(_mean(measure)[0])
    if isinstance(measure, EmpiricalMeasure):
        x, w = measure.points[:, 0], measure.weights
    else:
        x, w = measure.centers, measure.values * measure.h
    phase = 2.0 * np.pi * np.outer(xi, x - m)  # (K, N)
    return phase, w, m, (np.cos(phase) @ w), (np.sin(phase) @ w)


def linear_derivative(spec: FunctionalSpec, mu: Measure, y, order: int = 0) -> np.ndarray:
    """d^order/dy^order of the linear functional derivative dPhi/dm(mu, y).

    The flat (order 0) value is normalized so that Gateaux differences
    (Phi((1-eps) mu + eps delta_y) - Phi(mu)) / eps converge to it as
    eps -> 0 (the integral of dPhi/dm against mu is already subtracted).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not 0 <= order <= MAX_REG_ORDER:
        raise ValueError("order must lie in [0, 6]")
    if spec.kind == "variance":
        m = float(_mean(mu)[0])
        if order == 0:
            return (y - m) ** 2 - mu.variance()
        if order == 1:
            return 2.0 * (y - m)
        if order == 2:
            return np.full(y.shape, 2.0)
        return np.zeros(y.shape)
    if spec.kind == "centered_fw":
        return _fw_linear_derivative(spec, mu, y, order)
    return _moment_linear_derivative(spec, mu, y, order)


def _fw_linear_derivative(spec, mu, y, order):
    xi, w = spec.quad.nodes_weights()
    weight = w * (1.0 + xi**2) ** (-spec.s)
    _, _, m, a, b = _fw_trig_moments(mu, xi)
    twopix = 2.0 * np.pi * xi
    yy = y[:, np.newaxis] - m  # (P, K) after broadcast
    ph = np.outer(y - m, twopix)  # (P, K)
    # Perturbing mu by eps (delta_y - mu) moves the mean by eps (y - m);
    # the chain rule through the centering gives, per frequency,
    #   dA(y) = cos(2 pi xi (y-m)) - A + 2 pi xi B (y-m)
    #   dB(y) = sin(2 pi xi (y-m)) - B - 2 pi xi A (y-m)
    # and dPhi/dm = int w(xi) [2 (A-1) dA + 2 B dB] dxi.
    if order == 0:
        da = np.cos(ph) - a + twopix * b * yy
        db = np.sin(ph) - b - twopix * a * yy
        integrand = 2.0 * (a - 1.0) * da + 2.0 * b * db
    else:
        shift = order * np.pi / 2.0
        trig_a = twopix**order * np.cos(ph + shift)
        trig_b = twopix**order * np.sin(ph + shift)
        lin_a = twopix * b if order == 1 else 0.0
        lin_b = -twopix * a if order == 1 else 0.0
        integrand = 2.0 * (a - 1.0) * (trig_a + lin_a) + 2.0 * b * (trig_b + lin_b)
    return integrand @ weight


def _moment_linear_derivative(spec, mu, y, order):
    m = _mean(mu)
    yc = y[:, np.newaxis] - m

    def g_deriv(k, pts):
        if k == 0:
            return np.asarray(spec.g(pts), dtype=float)
        if spec.g_derivs is not None and len(spec.g_derivs) >= k:
            return np.asarray(spec.g_derivs[k - 1](pts), dtype=float)
        h = 1e-2
        return (g_deriv(k - 1, pts + h) - g_deriv(k - 1, pts - h)) / (2.0 * h)

    correction = _moment_integral(mu, lambda x: g_deriv(1, x - m))
    if order == 0:
        base = np.asarray(g_deriv(0, yc), dtype=float).reshape(y.shape)
        phi_val = _moment_integral(mu, lambda x: g_deriv(0, x - m))
        return base - phi_val - correction * (y - float(m[0]))
    vals = np.asarray(g_deriv(order, yc), dtype=float).reshape(y.shape)
    if order == 1:
        return vals - correction
    return vals


def pair_second(spec: FunctionalSpec, mu: Measure, y1, y2) -> np.ndarray:
    """Second functional derivative d2Phi/dm2(mu, y1, y2).

    Closed form for the variance.  The other kinds use a one-sided Gateaux
    difference of the linear derivative along delta_{y2} - mu, which yields
    the kernel anchored so its mu-average over the second slot is zero;
    this differs from the raw kernel only by a function of y1 alone, so
    bilinear pairings against zero-mass perturbations are unchanged.
    """
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    if spec.kind == "variance":
        m = float(_mean(mu)[0])
        return -2.0 * np.multiply.outer(y1 - m, y2 - m)
    eps = 1e-4
    base = linear_derivative(spec, mu, y1)
    out = np.empty((y1.size, y2.size))
    for j, z in enumerate(y2):
        f1 = linear_derivative(spec, _mix(mu, float(z), eps), y1)
        f2 = linear_derivative(spec, _mix(mu, float(z), 2.0 * eps), y1)
        # one-sided second-order difference; mixing weights must stay >= 0
        out[:, j] = (4.0 * f1 - f2 - 3.0 * base) / (2.0 * eps)
    return out


def _mix(mu: Measure, z: float, eps: float) -> EmpiricalMeasure:
    """(1 - eps) mu + eps delta_z as an empirical measure."""
    if isinstance(mu, EmpiricalMeasure):
        pts, w = mu.points, mu.weights
    else:
        pts, w = mu.centers[:, np.newaxis], mu.values * mu.h
    pts = np.vstack([pts, [[z]]])
    w = np.concatenate([(1.0 - eps) * w, [eps]])
    return EmpiricalMeasure(pts, w / w.sum())


def check_translation_invariance(spec_or_phi, mu: Measure, h: float = 1e-4) -> float:
    """Central-difference derivative of Phi along translations; max component.

    Accepts either a FunctionalSpec or a raw callable measure -> value, so
    non-admissible probes can be screened with the same tool.
    """
    phi = (
        (lambda m: eval_phi(spec_or_phi, m))
        if isinstance(spec_or_phi, FunctionalSpec)
        else spec_or_phi
    )
    d = _mean(mu).shape[0]
    worst = 0.0
    for j in range(d):
        step = np.zeros(d)
        step[j] = h
        resid = (phi(translate(mu, step)) - phi(translate(mu, -step))) / (2.0 * h)
        worst = max(worst, abs(float(resid)))
    return worst


@dataclass(frozen=True)
class RegularityReport:
    """Sampled bound on sup over mu, y of |d^k_y dPhi/dm| for k <= 6."""

    per_order: np.ndarray  # shape (7,)
    overall: float
    declared_c_phi: float | None
    within_declared: bool | None


def check_regularity(
    spec: FunctionalSpec,
    sample_measures: Sequence[Measure],
    probe_points: np.ndarray,
) -> RegularityReport:
    """Estimate the order-6 derivative bound over sampled measures and probes."""
    probe = np.atleast_1d(np.asarray(probe_points, dtype=float))
    per_order = np.zeros(MAX_REG_ORDER + 1)
    for mu in sample_measures:
        for k in range(MAX_REG_ORDER + 1):
            vals = linear_derivative(spec, mu, probe, order=k)
            per_order[k] = max(per_order[k], float(np.abs(vals).max()))
    overall = float(per_order.max())
    within = None if spec.c_phi is None else bool(overall <= spec.c_phi)
    return RegularityReport(
        per_order=per_order,
        overall=overall,
        declared_c_phi=spec.c_phi,
        within_declared=within,
    )
