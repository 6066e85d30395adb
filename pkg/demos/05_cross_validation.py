"""Repeated random-holdout cross validation on the bundled
application-mimic data: 20% of patients held out per repeat, as in the
application protocol (35 of 173 held out, 138 to train).

Run:  python demos/05_cross_validation.py        (several minutes)
"""

from bnplc import SamplerConfig, cross_validate
from bnplc.datasets import load_application_mimic

patients = load_application_mimic()
config = SamplerConfig(iterations=4000, burn_in=2000, thin=4,
                       preliminary_iterations=800, seed=3)

# 5 repeats keeps the demo quick; the application protocol uses 25.
report = cross_validate(patients, n_repeats=5, holdout=35,
                        methods=("bma", "two-component"), config=config, seed=9)

print(f"train {report.meta['n_train']} / test {report.meta['n_test']} per repeat")
print("method          held-out loss   error    AUC")
for method in ("bma", "two-component"):
    loss = report.mean(method, "loss")
    err = report.mean(method, "pct_error")
    auc = report.mean(method, "auc")
    print(f"{method:15s} {loss:10.4f} {err:10.4f} {auc:8.4f}")
