"""Measure the O(1/N) weak-error rate of the particle approximation.

For the variance functional, the gap between the N-particle expectation and
the mean-field value shrinks like 1/N uniformly in time.  This is a scaled
down version of the full study (fewer replicas) that finishes in about half
a minute.
"""

import numpy as np

from cbolab.chaos import uniform_sampler, weak_error_study
from cbolab.functionals import FunctionalSpec
from cbolab.meanfield import fpe_solve_1d
from cbolab.measures import GridDensity
from cbolab.model import CboParams, kappa, make_cutoff, quadratic_objective

obj = quadratic_objective(0.0)
bump = make_cutoff(center=np.zeros(1), inner_radius=0.5)
kap = float(kappa(CboParams(
    dim=1, lambda_=5.0, sigma=0.3, alpha=0.5, c0=np.zeros(1), r_cut=0.5,
    dt=2e-4, horizon=1.0, snapshot_times=(0.0, 1.0), n_particles=8,
), obj))
horizon = 8.0 / kap
p = CboParams(
    dim=1, lambda_=5.0, sigma=0.3, alpha=0.5, c0=np.zeros(1), r_cut=0.5,
    dt=2e-4, horizon=horizon,
    snapshot_times=tuple(np.round(np.linspace(0.0, horizon, 20), 10)),
    n_particles=8,
)

ref = fpe_solve_1d(GridDensity.uniform(-1.0, 1.0, 512, support=(-0.4, 0.4)), p, obj, bump)
study = weak_error_study(
    p, obj, bump, uniform_sampler(-0.4, 0.4), FunctionalSpec.variance(),
    n_list=[16, 32, 64, 128], replicas=400, seed=3, reference=ref,
)

print(f"{'N':>5} {'sup error':>12} {'stderr':>10}")
for n, e, s in zip(study.n_list, study.sup_errors, study.sup_stderrs):
    print(f"{n:5d} {e:12.3e} {s:10.1e}")
print(f"log-log slope: {study.slope:.3f} +- {study.slope_ci:.3f} (theory: -1)")
if study.inconclusive:
    print("note: replica noise is large relative to the smallest errors; "
          "increase replicas for a sharper fit")
