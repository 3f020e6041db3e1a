"""Evolve first and second order perturbations of the mean-field flow.

Solves the background density flow, pushes a mollified point perturbation
and its derivative through the linearized equation, and prints how the
projection onto the limiting profile converges while the composed
second-derivative curve of the variance functional decays.
"""

import numpy as np

from cbolab.functionals import FunctionalSpec
from cbolab.lfpe import compose_dU2, d1_flow, d2_flow, m1_flow, projection_decay
from cbolab.meanfield import estimate_limit_point, fpe_solve_1d
from cbolab.measures import GridDensity, make_test_dictionary
from cbolab.model import CboParams, make_cutoff, quadratic_objective

obj = quadratic_objective(0.0)
bump = make_cutoff(center=np.zeros(1), inner_radius=0.5)
p = CboParams(
    dim=1, lambda_=5.0, sigma=0.3, alpha=0.5, c0=np.zeros(1), r_cut=0.5,
    dt=2e-4, horizon=6.0,
    snapshot_times=tuple(np.round(np.arange(0.0, 6.0 + 1e-9, 0.25), 10)),
    n_particles=8,
)

bg = fpe_solve_1d(GridDensity.uniform(-1.0, 1.0, 256, support=(-0.1, 0.4)), p, obj, bump)
xt = float(estimate_limit_point(bg))
print(f"limit point x~ = {xt:.5f}")

flow = d1_flow(bg, 0.3, p, obj, bump)
rep = projection_decay(flow, xt, make_test_dictionary(-1.0, 1.0, 32, 7))
print(f"d1 projection coefficient q_infty = {rep.q_infty:.4f}")
print(f"d1 residual: peak {rep.residual_curve.max():.3e} -> final {rep.residual_curve[-1]:.3e}"
      f" (fitted rate {rep.fitted_rate:.2f})" if rep.fitted_rate else "")

second, q1, q2 = d2_flow(bg, 0.3, -0.05, p, obj, bump)
curve = compose_dU2(q1, q2, second, FunctionalSpec.variance())
print(f"{'t':>6} {'|d2 curve|':>12}")
for t, v in list(zip(bg.times, np.abs(curve)))[:10]:
    print(f"{t:6.2f} {v:12.3e}")
print("...")
print(f"{bg.times[-1]:6.2f} {abs(curve[-1]):12.3e}")
