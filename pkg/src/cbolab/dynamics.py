"""Cutoff CBO particle simulation and tangent-flow Monte Carlo.

The N-particle system follows

    dX_i = -lambda (X_i - m) dt + sigma |X_i - m| phi(X_i) dW_i,

with m the Gibbs-weighted consensus of the current ensemble.  Time stepping
is explicit Euler-Maruyama with the consensus frozen at the pre-step
ensemble; particles leaving B(c0, 2 r_cut) are radially projected back and
the events counted.  Noise comes from counter-based Philox streams keyed by
(seed, stream) with the step index as counter, so any snapshot is
reproducible without storing paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measures import EmpiricalMeasure, consensus
from .model import CboParams, CutoffBump, ObjectiveSpec

__all__ = [
    "EnsemblePath",
    "em_step",
    "simulate",
    "run_batch",
    "step_noise",
    "tangent_flow_y",
    "tangent_flow_s",
]

_U64 = np.uint64


def step_noise(master_seed: int, stream: int, step: int, shape) -> np.ndarray:
    """Standard Gaussian block for one time step of one stream.

    Counter-based: the Philox key is (master_seed, stream) and the counter
    encodes the step, so draws are reproducible in any order.
    """
    bits = np.random.Philox(
        key=np.array([master_seed, stream], dtype=_U64),
        counter=np.array([step, 0, 0, 0], dtype=_U64),
    )
    return np.random.Generator(bits).standard_normal(shape)


def _consensus_batch(x: np.ndarray, obj: ObjectiveSpec, alpha: float) -> np.ndarray:
    """Consensus points for a batch of ensembles, shape (R, N, d) -> (R, 1, d)."""
    energy = alpha * obj(x)  # (R, N)
    energy -= energy.min(axis=1, keepdims=True)
    w = np.exp(-energy)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("rn,rnd->rd", w, x)[:, np.newaxis, :]


def _clamp(x: np.ndarray, c0: np.ndarray, radius: float):
    """Radial projection onto B(c0, radius); returns (clamped x, event count)."""
    diff = x - c0
    rho = np.linalg.norm(diff, axis=-1, keepdims=True)
    outside = rho[..., 0] > radius
    n_events = int(np.count_nonzero(outside))
    if n_events:
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(rho > radius, radius / rho, 1.0)
        x = c0 + diff * scale
    return x, n_events


def _step_batch(
    x: np.ndarray,
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    noise: np.ndarray,
    dt: float,
):
    """One explicit step for a batch (R, N, d).  Returns (x_next, clamp_count)."""
    m = _consensus_batch(x, obj, p.alpha)
    diff = x - m
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    vol = p.sigma * dist * bump(x)[..., np.newaxis]
    x_next = x - p.lambda_ * diff * dt + vol * np.sqrt(dt) * noise
    if not np.all(np.isfinite(x_next)):
        raise FloatingPointError("particle state became non-finite")
    return _clamp(x_next, p.c0, 2.0 * p.r_cut)


@dataclass(frozen=True)
class EnsemblePath:
    """Snapshots of one simulated ensemble, plus clamp accounting."""

    params: CboParams
    snapshots: list  # list of (time, EmpiricalMeasure)
    clamp_events: int
    seed: int


def em_step(
    ensemble: EmpiricalMeasure,
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    rng: np.random.Generator,
) -> EmpiricalMeasure:
    """Single Euler-Maruyama step of the cutoff system."""
    x = ensemble.points[np.newaxis, :, :]
    noise = rng.standard_normal(x.shape)
    x_next, _ = _step_batch(x, p, obj, bump, noise, p.dt)
    return EmpiricalMeasure(x_next[0], ensemble.weights)


def _snapshot_steps(p: CboParams, n_steps: int) -> dict:
    """Map step index -> snapshot time for the requested snapshot grid."""
    out = {}
    for t in p.snapshot_times:
        k = int(round(t / p.dt))
        out[min(k, n_steps)] = float(t)
    return out


def simulate(
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    init: EmpiricalMeasure,
    seed: int,
    stream: int = 0,
    stream_ids: Sequence[int] | None = None,
) -> EnsemblePath:
    """Deterministic single-ensemble simulation with snapshot recording.

    ``stream_ids`` assigns a noise stream to each particle slot (default:
    identity).  Permuting particles together with their stream ids leaves
    the empirical measure invariant.
    """
    if init.points.shape[1] != p.dim:
        raise ValueError("init dimension does not match params")
    rho = np.linalg.norm(init.points - p.c0, axis=-1)
    if np.any(rho > p.r_cut + 1e-12):
        raise ValueError("init must be supported in B(c0, r_cut)")
    n = init.points.shape[0]
    ids = np.arange(n) if stream_ids is None else np.asarray(stream_ids, dtype=int)
    if sorted(ids.tolist()) != list(range(n)):
        raise ValueError("stream_ids must be a permutation of 0..N-1")

    n_steps = int(round(p.horizon / p.dt))
    want = _snapshot_steps(p, n_steps)
    x = init.points[np.newaxis, :, :].copy()
    clamps = 0
    snapshots = []
    if 0 in want:
        snapshots.append((want[0], EmpiricalMeasure(x[0].copy(), init.weights)))
    for k in range(n_steps):
        noise_by_id = step_noise(seed, stream, k, (n, p.dim))
        noise = noise_by_id[ids][np.newaxis, :, :]
        x, c = _step_batch(x, p, obj, bump, noise, p.dt)
        clamps += c
        if k + 1 in want:
            snapshots.append((want[k + 1], EmpiricalMeasure(x[0].copy(), init.weights)))
    return EnsemblePath(params=p, snapshots=snapshots, clamp_events=clamps, seed=seed)


def run_batch(
    p: CboParams,
    obj: ObjectiveSpec,
    bump: CutoffBump,
    init_points: np.ndarray,
    seed: int,
    stream: int,
    snapshot_callback: Callable[[int, float, np.ndarray], None],
) -> int:
    """Simulate R independent replicas at once; shape of init_points is (R, N, d).

    Calls ``snapshot_callback(index, time, states)`` with the full (R, N, d)
    state at every requested snapshot time.  Returns the total clamp count.
    Replica r uses noise rows r*N..(r+1)*N-1 of the per-step Philox block, so
    the batch is equivalent to R independent streams.
    """
    x = np.array(init_points, dtype=float)
    if x.ndim != 3:
        raise ValueError("init_points must have shape (R, N, d)")
    r, n, d = x.shape
    n_steps = int(round(p.horizon / p.dt))
    want = _snapshot_steps(p, n_steps)
    clamps = 0
    snap_idx = 0
    if 0 in want:
        snapshot_callback(snap_idx, want[0], x)
        snap_idx += 1
    for k in range(n_steps):
        noise = step_noise(seed, stream, k, (r, n, d))
        x, c = _step_batch(x, p, obj, bump, noise, p.dt)
        clamps += c
        if k + 1 in want:
            snapshot_callback(snap_idx, want[k + 1], x)
            snap_idx += 1
    return clamps


# ---------------------------------------------------------------------------
# Tangent (variational) flows, Monte Carlo
# ---------------------------------------------------------------------------


def _with_stderr(samples: np.ndarray):
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))


def tangent_flow_y(
    lambda_: float,
    sigma: float,
    bump: CutoffBump,
    mu_flow: Callable[[float], float] | float,
    t: float,
    x: float,
    u_grid: Sequence[float],
    replicas: int,
    seed: int,
    dt: float = 5e-4,
) -> dict:
    """Monte Carlo moments of the pathwise derivatives of the frozen-consensus SDE.

    Simulates dY = -lambda (Y - M(u)) du + sigma |Y - M(u)| phi(Y) dW jointly
    with its first and second variational processes, 1D.  The drift is
    integrated exactly (exponential integrator), so E[dY/dx] = e^{-lambda(u-t)}
    and E[d^2Y/dx^2] = 0 hold without time-discretization bias.

    Returns a dict of arrays keyed by "u", "mean_d1", "se_d1", "mean_d2",
    "se_d2", "mean_d1_sq", "se_d1_sq", "mean_d1_p4", "se_d1_p4".
    """
    m_of = (lambda u: float(mu_flow)) if np.isscalar(mu_flow) else mu_flow
    u_grid = np.asarray(u_grid, dtype=float)
    if np.any(u_grid < t - 1e-12):
        raise ValueError("u_grid must lie at or after the start time t")
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, 0x59], dtype=_U64))
    )
    y = np.full(replicas, float(x))
    d1 = np.ones(replicas)
    d2 = np.zeros(replicas)
    decay = np.exp(-lambda_ * dt)
    sq = np.sqrt(dt)
    rows = {k: [] for k in (
        "u", "mean_d1", "se_d1", "mean_d2", "se_d2",
        "mean_d1_sq", "se_d1_sq", "mean_d1_p4", "se_d1_p4",
    )}

    def record(u):
        rows["u"].append(u)
        for key, vals in (("d1", d1), ("d2", d2), ("d1_sq", d1**2), ("d1_p4", d1**4)):
            mean, se = _with_stderr(vals)
            rows[f"mean_{key}"].append(mean)
            rows[f"se_{key}"].append(se)

    targets = sorted(u_grid.tolist())
    next_i = 0
    u = t
    while next_i < len(targets) and targets[next_i] <= u + 1e-12:
        record(targets[next_i])
        next_i += 1
    while next_i < len(targets):
        m = m_of(u)
        diff = y - m
        g = np.sign(diff) * bump.deriv1d(y, 0) + np.abs(diff) * bump.deriv1d(y, 1)
        gp = 2.0 * np.sign(diff) * bump.deriv1d(y, 1) + np.abs(diff) * bump.deriv1d(y, 2)
        if sigma > 0:
            xi = rng.standard_normal(replicas)
        else:
            xi = 0.0
        shock = sigma * sq * xi
        y = m + diff * decay + np.abs(diff) * bump.deriv1d(y, 0) * shock
        d2 = d2 * decay + (gp * d1**2 + g * d2) * shock
        d1 = d1 * decay + g * d1 * shock
        u += dt
        while next_i < len(targets) and targets[next_i] <= u + dt * 0.5:
            record(targets[next_i])
            next_i += 1
    return {k: np.asarray(v) for k, v in rows.items()}


def _h_derivative(s: np.ndarray, bump: CutoffBump, order: int) -> np.ndarray:
    """d^k/ds^k of h(s) = |s| phi(s), valid away from s = 0."""
    if order == 0:
        return np.abs(s) * bump.deriv1d(s, 0)
    sign = np.sign(s)
    return sign * (order * bump.deriv1d(s, order - 1) + s * bump.deriv1d(s, order))


def tangent_flow_s(
    lambda_: float,
    sigma: float,
    bump: CutoffBump,
    t: float,
    x: float,
    u_grid: Sequence[float],
    replicas: int,
    seed: int,
    requests: Sequence[tuple] = ((0, 1), (1, 1), (2, 1), (0, 2), (1, 2), (0, 3)),
    dt: float = 5e-4,
) -> dict:
    """MC estimates of E[|d^beta (dS/dx)| |dS/dx|^p] for dS = -lambda S du + sigma |S| phi(S) dW.

    ``requests`` lists (p, beta) pairs with p + beta <= 5 and beta >= 1;
    |d^beta (dS/dx)| means the derivative of order beta+1 of the flow map.
    Returns arrays "u" plus "mean_p{p}_b{beta}" / "se_p{p}_b{beta}".
    """
    for p_req, beta in requests:
        if beta < 1 or p_req < 0 or p_req + beta > 5:
            raise ValueError(f"unsupported request (p={p_req}, beta={beta})")
    max_order = 1 + max(beta for _, beta in requests)
    u_grid = np.asarray(sorted(np.asarray(u_grid, dtype=float).tolist()))
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x53], dtype=_U64)))
    s = np.full(replicas, float(x))
    der = [None, np.ones(replicas)] + [np.zeros(replicas) for _ in range(max_order - 1)]
    decay = np.exp(-lambda_ * dt)
    sq = np.sqrt(dt)

    rows = {"u": []}
    for p_req, beta in requests:
        rows[f"mean_p{p_req}_b{beta}"] = []
        rows[f"se_p{p_req}_b{beta}"] = []

    def record(u):
        rows["u"].append(u)
        for p_req, beta in requests:
            vals = np.abs(der[beta + 1]) * np.abs(der[1]) ** p_req
            mean, se = _with_stderr(vals)
            rows[f"mean_p{p_req}_b{beta}"].append(mean)
            rows[f"se_p{p_req}_b{beta}"].append(se)

    next_i = 0
    u = t
    while next_i < len(u_grid) and u_grid[next_i] <= u + 1e-12:
        record(u_grid[next_i])
        next_i += 1
    while next_i < len(u_grid):
        h = [_h_derivative(s, bump, k) for k in range(max_order + 1)]
        shock = sigma * sq * rng.standard_normal(replicas) if sigma > 0 else 0.0
        s1, s2 = der[1], der[2] if max_order >= 2 else None
        s3 = der[3] if max_order >= 3 else None
        s4 = der[4] if max_order >= 4 else None
        # Faa di Bruno chain for the noise coefficient h(S) of each order.
        noise = [None, h[1] * s1]
        if max_order >= 2:
            noise.append(h[2] * s1**2 + h[1] * s2)
        if max_order >= 3:
            noise.append(h[3] * s1**3 + 3 * h[2] * s1 * s2 + h[1] * s3)
        if max_order >= 4:
            noise.append(
                h[4] * s1**4
                + 6 * h[3] * s1**2 * s2
                + h[2] * (3 * s2**2 + 4 * s1 * s3)
                + h[1] * s4
            )
        if max_order >= 5:
            s5 = der[5]
            noise.append(
                h[5] * s1**5
                + 10 * h[4] * s1**3 * s2
                + h[3] * (15 * s1 * s2**2 + 10 * s1**2 * s3)
                + h[2] * (10 * s2 * s3 + 5 * s1 * s4)
                + h[1] * s5
            )
        new_s = s * decay + h[0] * shock
        for k in range(1, max_order + 1):
            der[k] = der[k] * decay + noise[k] * shock
        s = new_s
        u += dt
        while next_i < len(u_grid) and u_grid[next_i] <= u + dt * 0.5:
            record(u_grid[next_i])
            next_i += 1
    return {k: np.asarray(v) for k, v in rows.items()}
