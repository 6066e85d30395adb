"""Fit the mixture model to the bundled application-mimic data and make
model-averaged predictions with credible intervals, a ROC curve, and a
cost-balanced threshold.

Run:  python demos/02_fit_and_predict.py        (a few minutes)
"""

import numpy as np

from bnplc import SamplerConfig, bma_predict_many, best_threshold, roc_auc, run_chain
from bnplc.datasets import load_application_mimic
from bnplc.diagnostics import trace_summary

patients = load_application_mimic()
print(f"{len(patients)} patients, {sum(p.disease for p in patients)} with the outcome")

# Desk-scale chain; raise iterations for production use.
config = SamplerConfig(iterations=6000, burn_in=3000, thin=5,
                       preliminary_iterations=1000, seed=11)
trace = run_chain(patients, config)
summary = trace_summary(trace)
print(f"fit done: {len(trace.draws)} retained draws, "
      f"{summary['mean_nonempty_clusters']:.1f} nonempty clusters on average, "
      f"Geweke z (marginal loglik) {summary['geweke_z_marginal']:.2f}")

results = bma_predict_many(trace, patients, interval_level=0.5)
probs = np.array([r.prob for r in results])
labels = np.array([p.disease for p in patients])

auc, curve = roc_auc(probs, labels)
print(f"\nwithin-sample AUC {auc:.3f}; "
      f"loss {np.mean((labels - probs) ** 2):.3f}; "
      f"error at 1/2 {np.mean((probs > 0.5) != labels):.3f}")

# A cheaper threshold when both error types cost the same.
t = best_threshold(curve, cost_ratio=1.0)
sens = np.mean(probs[labels == 1] > t)
spec = np.mean(probs[labels == 0] <= t)
print(f"balanced threshold {t:.3f}: sensitivity {sens:.2f}, specificity {spec:.2f}")

print("\nfive sample patients (prob [50% interval]):")
for r, p in zip(results[:5], patients[:5]):
    lo, hi = r.interval
    mark = "outcome" if p.disease else "healthy"
    print(f"  {p.id} ({mark}): {r.prob:.2f} [{lo:.2f}, {hi:.2f}]")
