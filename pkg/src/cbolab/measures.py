"""Measure representations and metrics.

Two concrete measure types are used throughout: weighted particle clouds
(EmpiricalMeasure) and signed densities on a uniform 1D grid (GridDensity).
On top of them this module provides the Gibbs-weighted consensus point, exact
Fourier transforms, the frequency-weighted negative Sobolev norm, centering,
1D Wasserstein distances, and a dictionary lower bound for dual Sobolev norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .model import ObjectiveSpec

__all__ = [
    "EmpiricalMeasure",
    "GridDensity",
    "QuadratureSpec",
    "SobolevNormResult",
    "consensus",
    "fourier",
    "sobolev_dual_norm",
    "center",
    "w2_centered_to_delta0",
    "w2_1d",
    "dual_norm_probe",
    "make_test_dictionary",
]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted particle cloud: points of shape (N, d), weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, np.newaxis]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must have one entry per point")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, np.newaxis]
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, point) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[np.newaxis, :], np.ones(1))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def variance(self) -> float:
        """Total variance: integral of |x - mean|^2."""
        diff = self.points - self.mean()
        return float(self.weights @ np.sum(diff**2, axis=1))


@dataclass(frozen=True)
class GridDensity:
    """Density values on cell midpoints of a uniform grid over [lo, hi].

    Values may be signed (linearized states) or nonnegative (probabilities).
    The represented measure is sum_j values[j] * h * delta-ish at midpoints,
    i.e. integrals are midpoint quadratures.
    """

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.hi <= self.lo:
            raise ValueError("hi must exceed lo")
        if self.values.ndim != 1:
            raise ValueError("values must be a 1D array")

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_cells) + 0.5) * self.h

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.h)

    def integrate(self, f_values: np.ndarray) -> float:
        """Midpoint pairing <f, q> for f sampled on the cell centers."""
        return float(np.dot(f_values, self.values) * self.h)

    def mean(self) -> np.ndarray:
        return np.atleast_1d(self.integrate(self.centers))

    def variance(self) -> float:
        m = float(self.mean()[0])
        return self.integrate((self.centers - m) ** 2)

    def total_variation(self) -> float:
        return float(np.abs(self.values).sum() * self.h)

    @classmethod
    def uniform(cls, lo: float, hi: float, n_cells: int, support=None) -> "GridDensity":
        """Probability density, uniform on ``support`` (default: full interval)."""
        g = cls(lo, hi, np.zeros(n_cells))
        a, b = support if support is not None else (lo, hi)
        x = g.centers
        vals = np.where((x >= a) & (x <= b), 1.0, 0.0)
        if vals.sum() == 0:
            # support narrower than a cell: concentrate on the nearest cell
            vals[int(np.argmin(np.abs(x - 0.5 * (a + b))))] = 1.0
        vals /= vals.sum() * g.h
        return replace(g, values=vals)

    def normalized(self) -> "GridDensity":
        return replace(self, values=self.values / self.mass)


Measure = Union[EmpiricalMeasure, GridDensity]


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization of the frequency integral of the (-s,2) norm."""

    xi_max: float = 64.0
    n_nodes: int = 1024
    rule: str = "trapezoid"

    def __post_init__(self):
        if self.xi_max <= 0:
            raise ValueError("xi_max must be positive")
        if self.n_nodes < 16:
            raise ValueError("n_nodes must be at least 16")
        if self.rule not in ("trapezoid", "gauss"):
            raise ValueError("rule must be 'trapezoid' or 'gauss'")

    def nodes_weights(self):
        if self.rule == "trapezoid":
            xi = np.linspace(-self.xi_max, self.xi_max, self.n_nodes)
            w = np.full(self.n_nodes, xi[1] - xi[0])
            w[0] *= 0.5
            w[-1] *= 0.5
        else:
            x, w = np.polynomial.legendre.leggauss(self.n_nodes)
            xi = x * self.xi_max
            w = w * self.xi_max
        return xi, w


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def consensus(measure: Measure, obj: ObjectiveSpec, alpha: float) -> np.ndarray:
    """Gibbs-weighted mean: integral of x e^{-alpha E} dmu over the partition sum.

    Stabilized by subtracting the minimum of alpha*E over the support so the
    weights stay finite for large alpha.  Returns a point of shape (d,).
    """
    if isinstance(measure, EmpiricalMeasure):
        pts, base_w = measure.points, measure.weights
    else:
        pts = measure.centers[:, np.newaxis]
        base_w = measure.values * measure.h
    if base_w.sum() <= 0:
        raise ValueError("measure must have positive mass")
    energy = alpha * obj(pts)
    if not np.all(np.isfinite(energy)):
        raise ValueError("objective produced non-finite values on the support")
    energy = energy - energy.min()
    w = base_w * np.exp(-energy)
    return (w @ pts) / w.sum()


def fourier(measure: Measure, xi) -> np.ndarray:
    """Fourier transform at frequencies xi: integral of e^{-i 2 pi xi.x} dmu.

    ``xi`` may be a scalar, a 1D array of frequencies (d=1), or an array of
    shape (K, d).
    """
    xi = np.asarray(xi, dtype=float)
    scalar = xi.ndim == 0
    if isinstance(measure, EmpiricalMeasure):
        pts, w = measure.points, measure.weights
    else:
        pts = measure.centers[:, np.newaxis]
        w = measure.values * measure.h
    d = pts.shape[1]
    if xi.ndim <= 1:
        xi2 = np.atleast_1d(xi)[:, np.newaxis] * np.ones((1, d))
    else:
        xi2 = xi
    phase = pts @ xi2.T  # (N, K)
    out = (w[:, np.newaxis] * np.exp(-2j * np.pi * phase)).sum(axis=0)
    return out[0] if scalar else out


@dataclass(frozen=True)
class SobolevNormResult:
    """Truncated (-s,2) norm value plus the analytic tail budget."""

    value: float
    tail_bound: float

    def __float__(self):
        return self.value


def _as_difference(q):
    """Normalize the signed-measure argument to a list of (sign, measure)."""
    if isinstance(q, GridDensity):
        return [(1.0, q)]
    if isinstance(q, (tuple, list)) and len(q) == 2:
        return [(1.0, q[0]), (-1.0, q[1])]
    raise TypeError("q must be a signed GridDensity or a (mu, nu) pair")


def sobolev_dual_norm(q, s: float, quad: QuadratureSpec = QuadratureSpec(), dim: int = 1) -> SobolevNormResult:
    """Frequency-weighted L2 norm of the Fourier transform of a signed measure.

    value = ( sum_k w_k (1+|xi_k|^2)^{-s} |Fq(xi_k)|^2 )^{1/2} over the
    truncated frequency window.  The reported tail bound is the analytic
    budget (1+xi_max^2)^{-s+dim/2} * ||q||_TV^2 for the discarded tail.
    """
    if s <= dim / 2:
        raise ValueError("s must exceed dim/2 for the frequency integral to converge")
    parts = _as_difference(q)
    xi, w = quad.nodes_weights()
    fq = np.zeros(xi.shape[0], dtype=complex)
    tv = 0.0
    for sign, m in parts:
        fq = fq + sign * fourier(m, xi)
        if isinstance(m, EmpiricalMeasure):
            tv += float(np.abs(m.weights).sum())
        else:
            tv += m.total_variation()
    integrand = (1.0 + xi**2) ** (-s) * np.abs(fq) ** 2
    value = math.sqrt(max(0.0, float(np.dot(w, integrand))))
    tail = (1.0 + quad.xi_max**2) ** (-s + dim / 2) * tv**2
    return SobolevNormResult(value=value, tail_bound=tail)


def center(measure: Measure) -> Measure:
    """Pushforward under x -> x - mean; the result has mean 0.

    Idempotent: when the mean is already at the numerical floor the measure
    is returned unchanged.
    """
    if isinstance(measure, EmpiricalMeasure):
        m = measure.mean()
        scale = max(1.0, float(np.max(np.abs(measure.points))) if measure.points.size else 1.0)
        if np.all(np.abs(m) <= 1e-14 * scale):
            return measure
        return EmpiricalMeasure(measure.points - m, measure.weights)
    m = float(measure.mean()[0])
    scale = max(1.0, abs(measure.lo), abs(measure.hi))
    if abs(m) <= 1e-14 * scale:
        return measure
    return GridDensity(measure.lo - m, measure.hi - m, measure.values)


def w2_centered_to_delta0(measure: Measure) -> float:
    """Wasserstein-2 distance from the centered measure to a point mass at 0.

    Equals the square root of the total variance.
    """
    return math.sqrt(max(0.0, measure.variance()))


def _quantile_representation(measure: Measure):
    """Sorted support points and their weights (1D)."""
    if isinstance(measure, EmpiricalMeasure):
        if measure.dim != 1:
            raise ValueError("w2_1d requires one-dimensional measures")
        x = measure.points[:, 0]
        order = np.argsort(x, kind="stable")
        return x[order], measure.weights[order]
    if np.any(measure.values < -1e-12 * max(1.0, np.abs(measure.values).max())):
        raise ValueError("w2_1d requires a nonnegative density")
    w = np.clip(measure.values, 0.0, None) * measure.h
    return measure.centers, w / w.sum()


def w2_1d(mu: Measure, nu: Measure) -> float:
    """Wasserstein-2 distance between 1D measures via quantile coupling."""
    x_mu, w_mu = _quantile_representation(mu)
    x_nu, w_nu = _quantile_representation(nu)
    cw_mu = np.cumsum(w_mu)
    cw_nu = np.cumsum(w_nu)
    # Merge the two cumulative-weight ladders into common quantile segments.
    qs = np.concatenate([cw_mu, cw_nu])
    qs = np.unique(np.clip(qs, 0.0, 1.0))
    seg = np.diff(np.concatenate([[0.0], qs]))
    # Quantile function value on each segment: first support point whose
    # cumulative weight reaches the segment's upper end.
    idx_mu = np.searchsorted(cw_mu, qs - 1e-15, side="left")
    idx_nu = np.searchsorted(cw_nu, qs - 1e-15, side="left")
    idx_mu = np.clip(idx_mu, 0, len(x_mu) - 1)
    idx_nu = np.clip(idx_nu, 0, len(x_nu) - 1)
    diff2 = (x_mu[idx_mu] - x_nu[idx_nu]) ** 2
    return math.sqrt(max(0.0, float(np.dot(seg, diff2))))


# ---------------------------------------------------------------------------
# Dictionary lower bound for dual Sobolev norms
# ---------------------------------------------------------------------------


class _TestFunction:
    """Smooth test function with analytic derivatives up to order 6."""

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order: int):
        raise NotImplementedError

    def sup_norm(self, lo: float, hi: float, n: int, n_grid: int = 2001) -> float:
        """W^{n,infinity} norm: sum over orders k <= n of sup |d^k f|."""
        xs = np.linspace(lo, hi, n_grid)
        return float(sum(np.max(np.abs(self.derivative(xs, k))) for k in range(n + 1)))


class _Sinusoid(_TestFunction):
    def __init__(self, omega: float, phase: float):
        self.omega = omega
        self.phase = phase

    def derivative(self, x, order):
        x = np.asarray(x, dtype=float)
        return self.omega**order * np.sin(self.omega * x + self.phase + order * np.pi / 2.0)


class _ChebyshevPoly(_TestFunction):
    def __init__(self, coeffs, lo, hi):
        self.poly = np.polynomial.chebyshev.Chebyshev(coeffs, domain=[lo, hi])

    def derivative(self, x, order):
        return self.poly.deriv(order)(np.asarray(x, dtype=float)) if order else self.poly(x)


class _GaussBump(_TestFunction):
    def __init__(self, loc: float, width: float):
        self.loc = loc
        self.width = width

    def derivative(self, x, order):
        z = (np.asarray(x, dtype=float) - self.loc) / self.width
        base = np.exp(-0.5 * z**2)
        if order == 0:
            return base
        he = np.polynomial.hermite_e.HermiteE.basis(order)(z)
        return (-1.0 / self.width) ** order * he * base


def make_test_dictionary(lo: float, hi: float, size: int, seed: int) -> list:
    """Reproducible mixed dictionary of sinusoids, polynomials, and bumps."""
    rng = np.random.default_rng(seed)
    length = hi - lo
    out = []
    for i in range(size):
        family = i % 3
        if family == 0:
            k = rng.integers(1, 9)
            out.append(_Sinusoid(2.0 * np.pi * k / length, rng.uniform(0, 2 * np.pi)))
        elif family == 1:
            deg = int(rng.integers(2, 7))
            coeffs = rng.standard_normal(deg + 1)
            out.append(_ChebyshevPoly(coeffs, lo, hi))
        else:
            loc = rng.uniform(lo + 0.1 * length, hi - 0.1 * length)
            width = rng.uniform(0.05, 0.3) * length
            out.append(_GaussBump(loc, width))
    return out


def dual_norm_probe(
    q: GridDensity, n: int, dictionary_size: int = 48, seed: int = 7
) -> float:
    """Lower-bound proxy for the dual W^{n,infinity} norm of a signed density.

    Maximizes |<f, q>| over a fixed dictionary of smooth test functions, each
    normalized to unit W^{n,infinity} norm on [lo, hi].  The same underlying
    dictionary is used for every n, so the probe is nonincreasing in n.
    """
    if n not in (1, 2, 4, 6):
        raise ValueError("supported orders are n in {1, 2, 4, 6}")
    xs = q.centers
    best = 0.0
    for f in make_test_dictionary(q.lo, q.hi, dictionary_size, seed):
        norm = f.sup_norm(q.lo, q.hi, n)
        if norm <= 0:
            continue
        best = max(best, abs(q.integrate(f(xs))) / norm)
    return best
