"""Miniature replicate study comparing the mixture model against the
two-component baseline on the heterogeneous five-group scenario.

The full desk-scale study (20 replicates, 5000 test patients, 20k
iterations) lives in the acceptance suite; this demo runs a reduced
version in a few minutes.

Run:  python demos/04_simulation_study.py
"""

from bnplc import SamplerConfig, run_study, scenario_sim1

sc = scenario_sim1()
print("scenario:", sc.name)
print("  weights      ", sc.cluster_weights.tolist())
print("  outcome rates", sc.cluster_disease_rates.tolist())

config = SamplerConfig(iterations=4000, burn_in=2000, thin=4,
                       preliminary_iterations=800, seed=5)
report = run_study(sc, n_replicates=3, methods=("bma", "two-component", "avg-h"),
                   config=config, n_train=200, n_test=1500, seed=42)

print(f"\n{3} replicates, 200 training / 1500 test patients each")
print("method          metric            mean     sd")
for method in ("bma", "two-component"):
    for metric in ("oos_loss", "oos_pct_error", "oos_auc"):
        mean, sd = report.metrics[method][metric]
        print(f"{method:15s} {metric:16s} {mean:7.4f} {sd:7.4f}")

gap = (report.mean("two-component", "oos_loss") - report.mean("bma", "oos_loss")) \
    / report.mean("two-component", "oos_loss")
print(f"\nrelative out-of-sample gain of model averaging: {gap:.1%}")
print(f"mixture finds {report.mean('bma', 'n_clusters'):.1f} nonempty clusters "
      f"(truth: 5); height-0.75 partition error "
      f"{report.mean('avg-h', 'partition_error'):.3f}")
