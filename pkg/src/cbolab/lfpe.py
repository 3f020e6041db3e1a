"""Linearized Fokker-Planck machinery on a 1D grid.

Everything here lives on the grid of a solved background flow mu_t.  The
forward operators are

    L_mu f = (sigma^2/2) (x - M)^2 phi^2 f'' - lambda (x - M) f'
    A_mu f = <lambda f' - sigma^2 phi^2 (. - M) f'', mu> (x - M) w(x) / <w, mu>

with w = e^{-alpha E}.  Their adjoints are taken as plain matrix transposes
with respect to the grid pairing <f, q> = h f.q, so the duality identity is
exact at machine precision.  Signed states q_t (mollified deltas, their
derivatives, and second-order corrections driven by the bilinear source B)
evolve by dq/dt = L* q + A* q + r with explicit substepping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .measures import GridDensity, dual_norm_probe
from .meanfield import DensityFlow, _grid_consensus
from .model import CboParams, CutoffBump, ObjectiveSpec

__all__ = [
    "LinearizedFlow",
    "ProjectionReport",
    "diff_matrices",
    "lin_apply",
    "a_apply",
    "coeff_derivatives",
    "lfpe_solve",
    "m1_flow",
    "d1_flow",
    "m2_flow",
    "d2_flow",
    "source_B",
    "projection_decay",
    "compose_dU2",
    "mollified_delta",
]


@dataclass(frozen=True)
class LinearizedFlow:
    """Signed perturbation states along a background mean-field flow."""

    times: np.ndarray
    states: list  # GridDensity per time
    background: DensityFlow
    kind: str


def diff_matrices(n: int, h: float):
    """Sparse first and second difference matrices that annihilate constants.

    D1 is centered with one-sided boundary rows; D2 is the three-point
    Laplacian with zero boundary rows (the diffusion coefficient vanishes at
    the confinement boundary, so those rows never matter).
    """
    e = np.ones(n)
    d1 = sp.diags([-e[1:], e[1:]], [-1, 1], format="lil") / (2.0 * h)
    d1[0, :3] = 0.0
    d1[0, 0], d1[0, 1] = -1.0 / h, 1.0 / h
    d1[-1, -3:] = 0.0
    d1[-1, -2], d1[-1, -1] = -1.0 / h, 1.0 / h
    d2 = sp.diags([e[1:], -2.0 * e, e[1:]], [-1, 0, 1], format="lil") / h**2
    d2[0, :] = 0.0
    d2[-1, :] = 0.0
    return d1.tocsr(), d2.tocsr()


class _Operators:
    """Frozen-background realization of L and A on the grid."""

    def __init__(self, mu: GridDensity, p: CboParams, obj: ObjectiveSpec, bump: CutoffBump):
        x = mu.centers
        h = mu.h
        self.grid = (mu.lo, mu.hi, mu.n_cells)
        energies = obj(x[:, np.newaxis])
        m = _grid_consensus(x, h, np.clip(mu.values, 0.0, None), energies, p.alpha)
        self.m_consensus = m
        phi_sq = bump(x[:, np.newaxis]) ** 2
        self.adv = -p.lambda_ * (x - m)
        self.adiff = 0.5 * p.sigma**2 * phi_sq * (x - m) ** 2
        self.d1, self.d2 = diff_matrices(x.size, h)
        self.l_mat = sp.diags(self.adiff) @ self.d2 + sp.diags(self.adv) @ self.d1
        # A f = u (v . f): u is the rank-one profile, v the integration row.
        w = np.exp(-p.alpha * (energies - energies.min()))
        mass_w = float(np.dot(w, mu.values) * h)
        self.u = (x - m) * w / mass_w
        mu_vals = mu.values
        self.v = h * (
            self.d1.T @ (p.lambda_ * mu_vals)
            - self.d2.T @ (p.sigma**2 * phi_sq * (x - m) * mu_vals)
        )

    def forward(self, f: np.ndarray) -> np.ndarray:
        return self.l_mat @ f + self.u * float(np.dot(self.v, f))

    def adjoint(self, q: np.ndarray) -> np.ndarray:
        return self.l_mat.T @ q + self.v * float(np.dot(self.u, q))

    def implicit_stepper(self, dt: float):
        """Backward-Euler solve of (I - dt (L* + A*)) q_new = rhs.

        The rank-one A* = v u^T is folded in by the Sherman-Morrison
        formula on top of a sparse LU of I - dt L*.
        """
        import scipy.sparse.linalg as spla

        n = self.l_mat.shape[0]
        lu = spla.splu((sp.identity(n) - dt * self.l_mat.T).tocsc())
        minv_v = lu.solve(self.v)
        denom = 1.0 - dt * float(np.dot(self.u, minv_v))

        def step(rhs: np.ndarray) -> np.ndarray:
            y = lu.solve(rhs)
            return y + (dt * float(np.dot(self.u, y)) / denom) * minv_v

        return step


def _check_grid(a: GridDensity, b: GridDensity):
    if (a.lo, a.hi, a.n_cells) != (b.lo, b.hi, b.n_cells):
        raise ValueError("grid mismatch")


def lin_apply(f: np.ndarray, mu: GridDensity, p, obj, bump) -> np.ndarray:
    """Forward L_mu applied to grid samples of f."""
    f = np.asarray(f, dtype=float)
    if f.shape != mu.values.shape:
        raise ValueError("grid mismatch")
    return _Operators(mu, p, obj, bump).l_mat @ f


def a_apply(f: np.ndarray, mu: GridDensity, p, obj, bump) -> np.ndarray:
    """Forward rank-one linearization term A_mu applied to f."""
    f = np.asarray(f, dtype=float)
    if f.shape != mu.values.shape:
        raise ValueError("grid mismatch")
    op = _Operators(mu, p, obj, bump)
    return op.u * float(np.dot(op.v, f))


def coeff_derivatives(x, mu: GridDensity, y, p, obj, bump):
    """Measure derivatives of the drift and diffusion coefficients.

    Returns (db, da, d2b, d2a) where db, da are evaluated at (x, y) and the
    second-order kernels at (x, y, y) (equal arguments); x and y broadcast.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xs = mu.centers
    energies = obj(xs[:, np.newaxis])
    m = _grid_consensus(xs, mu.h, np.clip(mu.values, 0.0, None), energies, p.alpha)
    e0 = energies.min()
    w_y = np.exp(-p.alpha * (obj(np.atleast_1d(y)[:, np.newaxis]) - e0))
    w_y = w_y.reshape(y.shape) if y.shape else float(w_y)
    z = float(np.dot(np.exp(-p.alpha * (energies - e0)), mu.values) * mu.h)
    phi_sq = bump(np.atleast_1d(x)[:, np.newaxis].reshape(-1, 1)) ** 2
    phi_sq = phi_sq.reshape(x.shape) if x.shape else float(phi_sq)
    db = p.lambda_ * (y - m) * w_y / z
    da = -2.0 * p.sigma**2 * phi_sq * (x - m) * (y - m) * w_y / z
    d2b = -p.lambda_ * (2.0 * y - 2.0 * m) * w_y**2 / z**2
    d2a = (
        2.0
        * p.sigma**2
        * phi_sq
        * w_y**2
        * ((x - m) * (2.0 * y - 2.0 * m) + (y - m) ** 2)
        / z**2
    )
    return db, da, d2b, d2a


def _background_lookup(background: DensityFlow):
    times = np.asarray(background.times, dtype=float)
    if times.size < 2:
        raise ValueError("background must carry at least two snapshots")
    return times


def lfpe_solve(
    background: DensityFlow,
    q0: GridDensity,
    source,
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    kind: str = "custom",
    max_dt: float = 5e-3,
) -> LinearizedFlow:
    """Integrate dq/dt = L* q + A* q + r along the background flow.

    The background (and the source, a callable t -> grid values or None) is
    frozen on each interval between background snapshots; states are
    recorded at the background snapshot times.  Stepping is backward Euler
    (unconditionally stable: the diffusion degenerates at x = M, so an
    explicit scheme has undamped centered-advection modes).  Total mass
    stays zero by construction because constants are in the kernel of every
    operator row.
    """
    times = _background_lookup(background)
    _check_grid(background.densities[0], q0)
    q = q0.values.astype(float).copy()
    states = [GridDensity(q0.lo, q0.hi, q.copy())]
    for i in range(times.size - 1):
        op = _Operators(background.densities[i], p, obj, bump)
        r = None if source is None else np.asarray(source(float(times[i])), dtype=float)
        span = float(times[i + 1] - times[i])
        n_sub = max(1, int(np.ceil(span / max_dt)))
        dt = span / n_sub
        step = op.implicit_stepper(dt)
        for _ in range(n_sub):
            rhs = q if r is None else q + dt * r
            q = step(rhs)
        if not np.all(np.isfinite(q)):
            raise FloatingPointError(f"linearized state diverged near t={times[i + 1]:g}")
        states.append(GridDensity(q0.lo, q0.hi, q.copy()))
    return LinearizedFlow(times=times, states=states, background=background, kind=kind)


def mollified_delta(grid: GridDensity, z: float, width: float, derivative: bool = False) -> np.ndarray:
    """Gaussian mollification of delta_z (or of -delta_z') on the grid."""
    x = grid.centers
    g = np.exp(-0.5 * ((x - z) / width) ** 2)
    g /= g.sum() * grid.h
    if derivative:
        return g * (x - z) / width**2
    return g


def _default_width(grid: GridDensity) -> float:
    return 4.0 * grid.h


def m1_flow(background, z, p, obj, bump, mollify_width=None) -> LinearizedFlow:
    """First-order perturbation flow started from delta_z - mu_0."""
    g0 = background.densities[0]
    w = mollify_width or _default_width(g0)
    q0 = GridDensity(g0.lo, g0.hi, mollified_delta(g0, z, w) - g0.values)
    return lfpe_solve(background, q0, None, p, obj, bump, kind="m1")


def d1_flow(background, z, p, obj, bump, mollify_width=None) -> LinearizedFlow:
    """Derivative-of-delta perturbation flow: q_0 = -(delta_z)'."""
    g0 = background.densities[0]
    w = mollify_width or _default_width(g0)
    q0 = GridDensity(g0.lo, g0.hi, mollified_delta(g0, z, w, derivative=True))
    return lfpe_solve(background, q0, None, p, obj, bump, kind="d1")


def source_B(
    background_t: GridDensity,
    q1_t: GridDensity,
    q2_t: GridDensity,
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
) -> GridDensity:
    """Bilinear second-order source as a grid distribution.

    Weak form: <f, B> collects two drift cross terms, the second drift
    kernel against mu, two diffusion cross terms, and the second diffusion
    kernel against mu.  All y-integrals reduce to the scalars
    G_i = <(y - M) w, q_i> and W_i = <w, q_i> with Z = <w, mu>, after which
    B = D1^T v1 + D2^T v2 is exactly mass-free.
    """
    _check_grid(background_t, q1_t)
    _check_grid(background_t, q2_t)
    x = background_t.centers
    h = background_t.h
    energies = obj(x[:, np.newaxis])
    mu_vals = np.clip(background_t.values, 0.0, None)
    m = _grid_consensus(x, h, mu_vals, energies, p.alpha)
    w = np.exp(-p.alpha * (energies - energies.min()))
    z_mass = float(np.dot(w, mu_vals) * h)
    g1 = float(np.dot((x - m) * w, q1_t.values) * h)
    g2 = float(np.dot((x - m) * w, q2_t.values) * h)
    w1 = float(np.dot(w, q1_t.values) * h)
    w2 = float(np.dot(w, q2_t.values) * h)
    cross = g1 * w2 + w1 * g2
    phi_sq = bump(x[:, np.newaxis]) ** 2
    v1 = (
        p.lambda_ * g1 / z_mass * q2_t.values
        + p.lambda_ * g2 / z_mass * q1_t.values
        - p.lambda_ * cross / z_mass**2 * mu_vals
    )
    v2 = (
        -(p.sigma**2) * phi_sq * (x - m) * (g1 * q2_t.values + g2 * q1_t.values) / z_mass
        + p.sigma**2 * phi_sq * ((x - m) * cross + g1 * g2) / z_mass**2 * mu_vals
    )
    d1, d2 = diff_matrices(x.size, h)
    return GridDensity(background_t.lo, background_t.hi, d1.T @ v1 + d2.T @ v2)


def _second_order_flow(background, q1: LinearizedFlow, q2: LinearizedFlow, q0_vals, p, obj, bump, kind):
    times = _background_lookup(background)
    lookup = {float(t): i for i, t in enumerate(times)}

    def src(t):
        i = lookup[t]
        return source_B(background.densities[i], q1.states[i], q2.states[i], p, obj, bump).values

    g0 = background.densities[0]
    q0 = GridDensity(g0.lo, g0.hi, q0_vals)
    return lfpe_solve(background, q0, src, p, obj, bump, kind=kind)


def m2_flow(background, z1, z2, p, obj, bump, mollify_width=None) -> LinearizedFlow:
    """Second-order flow: initial mu_0 - delta_{z2}, source B(m1(z1), m1(z2))."""
    g0 = background.densities[0]
    w = mollify_width or _default_width(g0)
    q1 = m1_flow(background, z1, p, obj, bump, w)
    q2 = m1_flow(background, z2, p, obj, bump, w)
    q0_vals = g0.values - mollified_delta(g0, z2, w)
    return _second_order_flow(background, q1, q2, q0_vals, p, obj, bump, "m2")


def d2_flow(background, z1, z2, p, obj, bump, mollify_width=None):
    """Second-order derivative flow: zero initial state, source B(d1(z1), d1(z2)).

    Returns (d2, d1_at_z1, d1_at_z2) so callers can compose curves without
    re-solving the first-order flows.
    """
    g0 = background.densities[0]
    w = mollify_width or _default_width(g0)
    q1 = d1_flow(background, z1, p, obj, bump, w)
    q2 = d1_flow(background, z2, p, obj, bump, w)
    flow = _second_order_flow(background, q1, q2, np.zeros(g0.n_cells), p, obj, bump, "d2")
    return flow, q1, q2


@dataclass(frozen=True)
class ProjectionReport:
    """Fit of q_t against the representer of q_infty . grad delta_{x_tilde}."""

    q_infty: float
    times: np.ndarray
    residual_curve: np.ndarray
    fitted_rate: float | None
    uniform_bound: float


def projection_decay(flow: LinearizedFlow, x_tilde: float, dictionary) -> ProjectionReport:
    """Project each state onto xi -> xi'(x_tilde) and track the residual.

    q_infty is the least-squares coefficient fitted on the tail (final 10%
    of snapshots); the residual is the worst dictionary mismatch.  A decay
    rate is only reported when the residual spans >= 3 e-foldings.
    """
    xs = flow.states[0].centers
    pair = np.array([[s.integrate(f(xs)) for f in dictionary] for s in flow.states])
    rep = np.array([float(f.derivative(np.asarray(x_tilde), 1)) for f in dictionary])
    denom = float(rep @ rep)
    if denom <= 0:
        raise ValueError("dictionary has no sensitivity at x_tilde")
    coeffs = pair @ rep / denom
    n = len(flow.states)
    q_infty = float(np.mean(coeffs[max(n - max(n // 10, 1), 0):]))
    residual = np.abs(pair - np.outer(np.full(n, q_infty), rep)).max(axis=1)
    rate = None
    i0 = int(np.argmax(residual))
    peak = residual[i0]
    below = np.nonzero(residual[i0:] <= peak * np.exp(-3.0))[0]
    if below.size and peak > 0:
        i1 = i0 + int(below[0])
        seg = slice(i0, i1 + 1)
        good = residual[seg] > 0
        slope, _ = np.polyfit(flow.times[seg][good], np.log(residual[seg][good]), 1)
        if -slope > 0:
            rate = float(-slope)
    uniform = max(dual_norm_probe(s, 2) for s in flow.states)
    return ProjectionReport(
        q_infty=q_infty,
        times=flow.times,
        residual_curve=residual,
        fitted_rate=rate,
        uniform_bound=float(uniform),
    )


def compose_dU2(q1: LinearizedFlow, q2: LinearizedFlow, second: LinearizedFlow, phi_spec) -> np.ndarray:
    """Second-derivative curve of U(t, mu) = Phi(mu_t) along perturbation pairs.

    Per snapshot: <d2Phi/dm2(mu_t), q1_t x q2_t> + <dPhi/dm(mu_t), second_t>.
    With first-order m-flows and the m2 correction this stays bounded; with
    d-flows and the d2 correction it decays exponentially.
    """
    from .functionals import linear_derivative

    times = q1.times
    out = np.empty(times.size)
    for i in range(times.size):
        mu = q1.background.densities[i]
        xs = mu.centers
        h = mu.h
        a, b, s2 = q1.states[i].values, q2.states[i].values, second.states[i].values
        if phi_spec.kind == "variance":
            mbar = float(mu.mean()[0])
            pair2 = -2.0 * float(np.dot(xs - mbar, a) * h) * float(np.dot(xs - mbar, b) * h)
        else:
            from .functionals import pair_second

            kernel = pair_second(phi_spec, mu, xs, xs)
            pair2 = float(a @ kernel @ b) * h * h
        lin = linear_derivative(phi_spec, mu, xs)
        out[i] = pair2 + float(np.dot(lin, s2) * h)
    return out
