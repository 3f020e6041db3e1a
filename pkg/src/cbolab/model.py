"""Objective functions, smooth cutoff bumps, and parameter sets for CBO runs.

The consensus-based optimizer evolves particles inside a ball B(c0, 2*r_cut),
with the noise switched off smoothly outside B(c0, r_cut) by a radial bump.
This module owns the certified objective description, the bump construction,
and the closed-form admissibility / contraction-rate formulas used to gate
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ObjectiveSpec",
    "CutoffBump",
    "CboParams",
    "CertificationError",
    "KappaResult",
    "make_cutoff",
    "required_lambda",
    "kappa",
    "quadratic_objective",
    "certify_objective",
]

MAX_DERIVATIVE_ORDER = 6


class CertificationError(ValueError):
    """An objective failed a sampled check of its declared constants."""


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective E with certified constants.

    ``eval`` must be vectorized: it accepts arrays of shape (..., dim) and
    returns values of shape (...).  ``c_e`` is the quadratic-growth constant
    (E(x) - e_min >= c_e |x - x*|^2) and ``ell_e`` bounds every second
    partial derivative.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    minimizer: np.ndarray
    e_min: float
    c_e: float
    ell_e: float

    def __post_init__(self):
        object.__setattr__(self, "minimizer", np.atleast_1d(np.asarray(self.minimizer, dtype=float)))
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.minimizer.shape != (self.dim,):
            raise ValueError("minimizer must have shape (dim,)")
        if self.e_min < 0:
            raise ValueError("e_min must be nonnegative")
        if self.c_e <= 0 or self.ell_e <= 0:
            raise ValueError("c_e and ell_e must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape[-1] != self.dim:
            if self.dim == 1:
                x = x[..., np.newaxis]
            else:
                raise ValueError(f"points must have trailing dimension {self.dim}")
        return np.asarray(self.eval(x), dtype=float)


def quadratic_objective(x_star, scale: float = 1.0) -> ObjectiveSpec:
    """Canonical objective E(x) = scale * |x - x*|^2."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    dim = x_star.shape[0]

    def _eval(x):
        return scale * np.sum((x - x_star) ** 2, axis=-1)

    return ObjectiveSpec(
        dim=dim, eval=_eval, minimizer=x_star, e_min=0.0, c_e=scale, ell_e=2.0 * scale
    )


def certify_objective(
    obj: ObjectiveSpec,
    center,
    radius: float,
    n_samples: int = 100_000,
    seed: int = 0,
    grad_tol: float = 1e-6,
) -> dict:
    """Sample-based certification of the declared objective constants.

    Checks the quadratic-growth bound on quasi-random points in B(center,
    radius), the gradient at the declared minimizer, and the Hessian entries
    against ell_e by central differences.  Raises CertificationError on
    violation; returns a small report dict otherwise.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = obj.dim
    # Halton-style quasi-random fill of the ball via rejection from the cube.
    from scipy.stats import qmc

    sampler = qmc.Halton(d=d, scramble=True, seed=seed)
    pts = center + radius * (2.0 * sampler.random(n_samples) - 1.0)
    r2 = np.sum((pts - center) ** 2, axis=-1)
    pts = pts[r2 <= radius**2]

    vals = obj(pts)
    growth = vals - obj.e_min - obj.c_e * np.sum((pts - obj.minimizer) ** 2, axis=-1)
    worst = float(growth.min()) if growth.size else 0.0
    if worst < -1e-9 * max(1.0, abs(obj.e_min)):
        raise CertificationError(
            f"quadratic growth violated: margin {worst:.3e} at a sampled point"
        )

    h = 1e-5 * max(1.0, radius)
    eye = np.eye(d)
    grad = np.array(
        [
            float(obj(obj.minimizer + h * eye[i]) - obj(obj.minimizer - h * eye[i])) / (2 * h)
            for i in range(d)
        ]
    )
    gnorm = float(np.linalg.norm(grad))
    if gnorm > grad_tol:
        raise CertificationError(f"gradient at minimizer has norm {gnorm:.3e} > {grad_tol}")

    # Hessian entries by central differences at a handful of sample points.
    probe = pts[:: max(1, pts.shape[0] // 32)]
    hess_max = 0.0
    for x in probe:
        for i in range(d):
            for j in range(i, d):
                if i == j:
                    hij = float(obj(x + h * eye[i]) - 2 * obj(x) + obj(x - h * eye[i])) / h**2
                else:
                    hij = float(
                        obj(x + h * (eye[i] + eye[j]))
                        - obj(x + h * (eye[i] - eye[j]))
                        - obj(x - h * (eye[i] - eye[j]))
                        + obj(x - h * (eye[i] + eye[j]))
                    ) / (4 * h**2)
                hess_max = max(hess_max, abs(float(hij)))
    if hess_max > obj.ell_e * (1 + 1e-6) + 1e-6:
        raise CertificationError(f"Hessian entry {hess_max:.3e} exceeds ell_e={obj.ell_e}")

    return {
        "n_samples": int(pts.shape[0]),
        "growth_margin": worst,
        "grad_norm_at_minimizer": gnorm,
        "max_hessian_entry": hess_max,
    }


# ---------------------------------------------------------------------------
# Smooth cutoff bump
# ---------------------------------------------------------------------------


def _psi_jet(v: np.ndarray, order: int) -> list:
    """Exact derivatives of the smoothstep psi(v) = f(v)/(f(v)+f(1-v)).

    psi transitions from 0 at v=0 to 1 at v=1 and is C-infinity with all
    derivatives vanishing at both endpoints.  Computed by Taylor-jet
    arithmetic: the Taylor coefficients of -1/v and -1/(1-v) are closed
    forms, exp and division propagate by the standard convolution
    recurrences, and d^k psi = k! times the k-th jet coefficient.  Valid on
    the open interval (0, 1); returns arrays for orders 0..order.
    """
    n = order + 1
    # Taylor coefficients a_k of -1/v and b_k of -1/(1-v) around each point.
    a = [-((-1.0) ** k) * v ** -(k + 1) for k in range(n)]
    b = [-((1.0 - v) ** -(k + 1)) for k in range(n)]
    f = [np.exp(a[0])]
    g = [np.exp(b[0])]
    for k in range(1, n):
        f.append(sum(j * a[j] * f[k - j] for j in range(1, k + 1)) / k)
        g.append(sum(j * b[j] * g[k - j] for j in range(1, k + 1)) / k)
    s = [f[k] + g[k] for k in range(n)]
    c = [f[0] / s[0]]
    for k in range(1, n):
        c.append((f[k] - sum(s[j] * c[k - j] for j in range(1, k + 1))) / s[0])
    fact = 1.0
    out = []
    for k in range(n):
        out.append(c[k] * fact)
        fact *= k + 1
    return out


def _psi_derivative(v: np.ndarray, order: int) -> np.ndarray:
    """d^k psi / dv^k, evaluated safely on all of R (0 outside (0,1))."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    if order == 0:
        out[v >= 1.0] = 1.0
    # The transition-region terms overflow near the endpoints; all
    # derivatives decay like exp(-1/v) there, so a small margin loses nothing.
    interior = (v > 5e-3) & (v < 1.0 - 5e-3)
    if np.any(interior):
        with np.errstate(all="ignore"):
            vals = _psi_jet(v[interior], order)[order]
        out[interior] = np.nan_to_num(vals, nan=0.0, posinf=0.0, neginf=0.0)
    return out


@dataclass(frozen=True)
class CutoffBump:
    """Radial C-infinity bump: 1 on B(center, inner_radius), 0 outside twice it.

    ``derivative_constants[k]`` stores the measured scale-free bound
    r^k * max |d^k phi| along the radial direction, for k = 0..6.
    """

    center: np.ndarray
    inner_radius: float
    derivative_constants: np.ndarray = field(repr=False)

    @property
    def outer_radius(self) -> float:
        return 2.0 * self.inner_radius

    def _v(self, rho):
        # Transition variable: v >= 1 inside the inner ball, <= 0 outside 2r.
        return (2.0 * self.inner_radius - rho) / self.inner_radius

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scalar_1d = x.ndim == 0 or (self.center.shape[0] == 1 and x.shape[-1:] != (1,))
        if scalar_1d:
            x = np.atleast_1d(x)[..., np.newaxis]
        rho = np.linalg.norm(x - self.center, axis=-1)
        return _psi_derivative(self._v(rho), 0)

    def radial_derivative(self, rho, order: int) -> np.ndarray:
        """d^k/d rho^k of the radial profile phi(|x-c| = rho)."""
        if not 0 <= order <= MAX_DERIVATIVE_ORDER:
            raise ValueError(f"order must be in 0..{MAX_DERIVATIVE_ORDER}")
        rho = np.asarray(rho, dtype=float)
        vals = _psi_derivative(self._v(rho), order)
        return vals * (-1.0 / self.inner_radius) ** order

    def deriv1d(self, x, order: int) -> np.ndarray:
        """d^k/dx^k phi(x) for scalar coordinates (dim 1)."""
        x = np.asarray(x, dtype=float)
        delta = x - self.center[0]
        sign = np.sign(delta)
        vals = self.radial_derivative(np.abs(delta), order)
        return vals * np.where(order % 2 == 1, sign, 1.0)

    def grad(self, x) -> np.ndarray:
        """Gradient of phi at points of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        diff = x - self.center
        rho = np.linalg.norm(diff, axis=-1, keepdims=True)
        dphi = self.radial_derivative(rho[..., 0], 1)[..., np.newaxis]
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho > 0, diff / rho, 0.0)
        return dphi * unit


def make_cutoff(center, inner_radius: float, n_grid: int = 4001) -> CutoffBump:
    """Build the radial bump and measure its scale-free derivative bounds.

    The constants are measured numerically on a dense radial grid: for each
    order k <= 6, derivative_constants[k] = r^k * max |d^k phi| along the
    radius.  They are scale invariant by construction of the profile.
    """
    if inner_radius <= 0:
        raise ValueError("inner_radius must be positive")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    bump = CutoffBump(
        center=center,
        inner_radius=float(inner_radius),
        derivative_constants=np.zeros(MAX_DERIVATIVE_ORDER + 1),
    )
    rho = np.linspace(0.0, 2.2 * inner_radius, n_grid)
    consts = np.array(
        [
            np.max(np.abs(bump.radial_derivative(rho, k))) * inner_radius**k
            for k in range(MAX_DERIVATIVE_ORDER + 1)
        ]
    )
    object.__setattr__(bump, "derivative_constants", consts)
    return bump


# ---------------------------------------------------------------------------
# Parameter sets and rate formulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CboParams:
    """Full parameter set for one cutoff-CBO run."""

    lambda_: float
    sigma: float
    alpha: float
    dim: int
    c0: np.ndarray
    r_cut: float
    dt: float
    horizon: float
    snapshot_times: np.ndarray
    n_particles: int

    def __post_init__(self):
        object.__setattr__(self, "c0", np.atleast_1d(np.asarray(self.c0, dtype=float)))
        object.__setattr__(
            self, "snapshot_times", np.asarray(self.snapshot_times, dtype=float)
        )
        if self.lambda_ <= 0:
            raise ValueError("lambda_ must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.r_cut <= 0:
            raise ValueError("r_cut must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > self.horizon and self.horizon > 0:
            raise ValueError("dt must not exceed the horizon")
        if self.n_particles < 2:
            raise ValueError("at least 2 particles are required")
        ts = self.snapshot_times
        if ts.size and (ts.min() < -1e-12 or ts.max() > self.horizon + 1e-12):
            raise ValueError("snapshot_times must lie in [0, horizon]")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("snapshot_times must be strictly increasing")
        if self.c0.shape != (self.dim,):
            raise ValueError("c0 must have shape (dim,)")


def required_lambda(p: CboParams, obj: ObjectiveSpec) -> float:
    """Sufficient drift rate for the mean-field contraction estimate.

    d sigma^2 exp(18 c_E alpha r^2 - alpha e_min) + 4 r^2 exp(9 c_E alpha r^2).
    """
    a, r2 = p.alpha, p.r_cut**2
    return p.dim * p.sigma**2 * np.exp(18.0 * obj.c_e * a * r2 - a * obj.e_min) + (
        4.0 * r2 * np.exp(9.0 * obj.c_e * a * r2)
    )


class KappaResult(float):
    """Contraction rate value; carries a flag when lambda is below the gate."""

    below_gate: bool
    required: float

    def __new__(cls, value: float, below_gate: bool, required: float):
        out = super().__new__(cls, value)
        out.below_gate = below_gate
        out.required = required
        return out


def kappa(p: CboParams, obj: ObjectiveSpec) -> KappaResult:
    """Exponential decay rate 2(lambda - d sigma^2 e^{9 alpha c_E r^2 - alpha e_min}).

    The sufficient condition on lambda is conservative; when it fails the
    value is still returned, with ``below_gate`` set on the result.
    """
    req = required_lambda(p, obj)
    value = 2.0 * (
        p.lambda_
        - p.dim
        * p.sigma**2
        * np.exp(9.0 * p.alpha * obj.c_e * p.r_cut**2 - p.alpha * obj.e_min)
    )
    return KappaResult(value, below_gate=bool(p.lambda_ < req), required=float(req))
