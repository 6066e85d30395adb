"""Tour of the model core: the sigmoid trajectory, the within-subject
covariance, and the marginalized Gaussian likelihood.

Run:  python demos/01_model_and_likelihood.py
"""

import numpy as np

from bnplc import (
    DependenceParams,
    Patient,
    TrajectoryParams,
    build_covariance,
    eval_trajectory,
    patient_loglik,
)

# A trajectory on the analysis (log) scale: asymptote 4.7, rising through
# days 10-40, like a healthy profile in the motivating application.
traj = TrajectoryParams(np.array([4.7, 0.25, -3.8]))
days = np.array([10.0, 20.0, 30.0, 50.0, 70.0])
print("mean curve on days", days.astype(int).tolist())
print("  ", np.round(eval_trajectory(traj, days), 3).tolist())

# Dependence: a random intercept (gamma2) plus an autocorrelated residual
# whose correlation decays with the gap in weeks (rho per week).
dep = DependenceParams(gamma2=0.05, sigma2=0.10, rho=0.8)
cov = build_covariance(days, dep)
print("\ncovariance of a subject's measurements (days above):")
print(np.round(cov, 4))
corr = cov / np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
print("implied correlation of day-10 with later days:",
      np.round(corr[0], 3).tolist())

# The likelihood integrates the random intercept out; one subject with
# measurements near the curve scores much higher than one far away.
rng = np.random.default_rng(0)
on_curve = Patient("near", 1, days, eval_trajectory(traj, days) + 0.1 * rng.standard_normal(5))
off_curve = Patient("far", 1, days, eval_trajectory(traj, days) - 1.5)
print("\nlog likelihood near the curve:", round(patient_loglik(on_curve, traj, dep), 2))
print("log likelihood far from it:   ", round(patient_loglik(off_curve, traj, dep), 2))

# Saturation: extreme parameters degrade gracefully instead of overflowing.
steep = TrajectoryParams(np.array([4.0, 50.0, -100.0]))
print("\nsaturated evaluations:", eval_trajectory(steep, np.array([-10.0, 10.0])).tolist())
