"""Synthetic-data scenarios, evaluation metrics, and replicate studies
comparing the mixture model against the two-component baseline.

Scenario one is heterogeneous: five subgroups (40/20/15/15/10 percent of
patients) with disease rates 0, .2, .2, .9, 1 and distinct trajectories,
built to favor the mixture model.  Scenario two has a single healthy
(75%) and a single diseased (25%) subgroup, the two-component model's
home ground.  Trajectory constants are frozen catalog values chosen to
mimic the published curve shapes; study results are therefore stable
across library versions.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mcmc import SamplerConfig, run_chain, run_conditional_chain, run_two_component
from .model import DependenceParams, Patient, eval_trajectory
from .partition import METHODS as PARTITION_METHODS
from .partition import coclustering, select_partition
from .prediction import classify, prediction_matrix, roc_auc
from .rng import substream


@dataclass(frozen=True)
class ObservationDesign:
    """Rule for drawing measurement counts and days per patient.

    Default mimics the motivating application: one to six measurements
    at uniform random days in the first-trimester window (days 10-80).
    ``fixed_times`` overrides the draw entirely (moment-check hook).
    """

    n_min: int = 1
    n_max: int = 6
    t_min: float = 10.0
    t_max: float = 80.0
    fixed_times: np.ndarray | None = None

    def sample(self, rng):
        if self.fixed_times is not None:
            return np.asarray(self.fixed_times, dtype=float)
        n = int(rng.integers(self.n_min, self.n_max + 1))
        t = np.sort(rng.uniform(self.t_min, self.t_max, n))
        while n > 1 and np.any(np.diff(t) <= 0):
            t = np.sort(rng.uniform(self.t_min, self.t_max, n))
        return t


@dataclass(frozen=True)
class Scenario:
    """A generating mixture: weights, per-cluster disease rates and
    trajectories, dependence parameters, and the observation design.
    ``dep=None`` generates noise-free responses (degenerate test mode).
    """

    cluster_weights: np.ndarray
    cluster_disease_rates: np.ndarray
    cluster_trajectories: np.ndarray
    dep: DependenceParams | None
    obs_design: ObservationDesign = field(default_factory=ObservationDesign)
    name: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.cluster_weights, dtype=float)
        r = np.asarray(self.cluster_disease_rates, dtype=float)
        t = np.asarray(self.cluster_trajectories, dtype=float)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("weights must be a probability vector")
        if not (w.size == r.size == t.shape[0]) or t.shape[1] != 3:
            raise ValueError("weights, rates, trajectories must align")
        if np.any((r < 0) | (r > 1)):
            raise ValueError("disease rates must lie in [0, 1]")
        object.__setattr__(self, "cluster_weights", w)
        object.__setattr__(self, "cluster_disease_rates", r)
        object.__setattr__(self, "cluster_trajectories", t)

    @property
    def n_clusters(self):
        return self.cluster_weights.size


def scenario_sim1():
    """Five-subgroup scenario: three mostly healthy groups with high
    responses, two mostly diseased with low or flat responses."""
    return Scenario(
        cluster_weights=[0.40, 0.20, 0.15, 0.15, 0.10],
        cluster_disease_rates=[0.0, 0.2, 0.2, 0.9, 1.0],
        cluster_trajectories=[
            [4.70, 0.25, -4.0],   # rapid rise to a high plateau
            [4.30, 0.12, -2.2],   # slower rise, high plateau
            [4.15, 0.28, -2.6],   # rapid rise, slightly lower plateau
            [4.10, 0.22, -2.9],   # early plateau below the healthy band
            [3.70, 0.08, -1.0],   # slow drift, low
        ],
        dep=DependenceParams(gamma2=0.05, sigma2=0.1, rho=0.8),
        name="sim1",
    )


def scenario_sim2():
    """Two-subgroup scenario (75% healthy / 25% diseased), matching the
    two-component model's assumptions."""
    return Scenario(
        cluster_weights=[0.75, 0.25],
        cluster_disease_rates=[0.0, 1.0],
        cluster_trajectories=[
            [4.50, 0.200, -3.00],
            [3.80, 0.145, -2.05],
        ],
        dep=DependenceParams(gamma2=0.1, sigma2=0.2, rho=0.8),
        name="sim2",
    )


def generate_dataset(scenario, n_patients, rng, id_prefix="p"):
    """Draw patients from the scenario; returns (patients, truth).

    ``truth`` carries the generating cluster index and disease label per
    patient.  With ``dep=None`` responses sit exactly on the cluster
    curves.
    """
    if n_patients < 1:
        raise ValueError("need at least one patient")
    K = scenario.n_clusters
    patients = []
    clusters = np.empty(n_patients, dtype=np.intp)
    diseases = np.empty(n_patients, dtype=np.intp)
    for i in range(n_patients):
        k = int(rng.choice(K, p=scenario.cluster_weights))
        d = int(rng.random() < scenario.cluster_disease_rates[k])
        t = scenario.obs_design.sample(rng)
        y = eval_trajectory(scenario.cluster_trajectories[k], t)
        if scenario.dep is not None:
            dep = scenario.dep
            lag = np.abs(t[:, None] - t[None, :]) / 7.0
            cov = dep.sigma2 * dep.rho ** lag
            y = y + rng.normal(0.0, np.sqrt(dep.gamma2)) + \
                np.linalg.cholesky(cov) @ rng.standard_normal(t.size)
        clusters[i] = k
        diseases[i] = d
        patients.append(Patient(f"{id_prefix}{i}", d, t, y))
    return patients, {"clusters": clusters, "diseases": diseases}


def eval_metrics(probs, labels):
    """(loss, pct_error, auc): mean squared error of the probability,
    fraction misclassified at the 1/2 threshold, and ROC AUC."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must align")
    loss = float(np.mean((labels - probs) ** 2))
    pct_error = float(np.mean(classify(probs, 0.5) != labels))
    auc, _ = roc_auc(probs, labels.astype(int))
    return loss, pct_error, auc


def partition_error(est, truth):
    """Mean absolute pair-membership disagreement over unordered pairs.

    ``est`` is either a label vector or a co-clustering probability
    matrix (the model-averaged variant).
    """
    truth = np.asarray(truth)
    n = truth.size
    iu = np.triu_indices(n, k=1)
    true_ind = (truth[:, None] == truth[None, :])[iu].astype(float)
    est_arr = np.asarray(getattr(est, "probs", est))
    if est_arr.ndim == 2:
        est_pair = est_arr[iu]
    else:
        if est_arr.size != n:
            raise ValueError("label vector must align with truth")
        est_pair = (est_arr[:, None] == est_arr[None, :])[iu].astype(float)
    return float(np.mean(np.abs(est_pair - true_ind)))


def cluster_size_stats(labels):
    """(count, geometric mean size, number of small clusters) where a
    small cluster has fewer than 5 patients."""
    labels = np.asarray(labels)
    _, sizes = np.unique(labels, return_counts=True)
    geo = float(np.exp(np.mean(np.log(sizes))))
    return int(sizes.size), geo, int(np.sum(sizes <= 4))


@dataclass
class StudyReport:
    """Per-method, per-metric mean and SD across replicates."""

    metrics: dict
    raw: dict
    meta: dict

    def mean(self, method, metric):
        return self.metrics[method][metric][0]

    def sd(self, method, metric):
        return self.metrics[method][metric][1]

    @classmethod
    def from_raw(cls, raw, meta):
        metrics = {}
        for method, per_metric in raw.items():
            metrics[method] = {}
            for metric, values in per_metric.items():
                arr = np.asarray(values, dtype=float)
                sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
                metrics[method][metric] = (float(arr.mean()), sd)
        return cls(metrics=metrics, raw=raw, meta=meta)


def _max_workers(n_tasks):
    env = os.environ.get("BNPLC_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _bma_cluster_diagnostics(trace, truth_clusters):
    burn = trace.config.burn_in
    nonempty = float(trace.nonempty_counts[burn:].mean())
    per_draw = [cluster_size_stats(d.assignments) for d in trace.draws]
    geo = float(np.mean([g for _, g, _ in per_draw]))
    small = float(np.mean([s for _, _, s in per_draw]))
    M = coclustering(trace)
    err = partition_error(M, truth_clusters)
    return {"n_clusters": nonempty, "geo_mean_size": geo,
            "n_small": small, "partition_error": err}


def _replicate_worker(args):
    (scenario, rep, methods, config, n_train, n_test, seed, stage2_predict) = args
    train, truth = generate_dataset(scenario, n_train,
                                    substream(seed, "train", rep))
    test, test_truth = generate_dataset(scenario, n_test,
                                        substream(seed, "test", rep),
                                        id_prefix="t")
    train_labels = np.array([p.disease for p in train], dtype=float)
    test_labels = test_truth["diseases"].astype(float)

    out = {}
    needs_bnp = any(m == "bma" or m in PARTITION_METHODS for m in methods)
    trace = None
    if needs_bnp:
        trace = run_chain(train, config, rng=substream(seed, "chain", rep))

    def prediction_metrics(tr):
        within = prediction_matrix(tr, train).mean(axis=0)
        oos = prediction_matrix(tr, test).mean(axis=0)
        w = eval_metrics(within, train_labels)
        o = eval_metrics(oos, test_labels)
        return {"within_loss": w[0], "within_pct_error": w[1], "within_auc": w[2],
                "oos_loss": o[0], "oos_pct_error": o[1], "oos_auc": o[2]}

    for method in methods:
        if method == "bma":
            vals = prediction_metrics(trace)
            vals.update(_bma_cluster_diagnostics(trace, truth["clusters"]))
        elif method == "two-component":
            tc = run_two_component(train, config,
                                   rng=substream(seed, "twocomp", rep))
            vals = prediction_metrics(tc)
            labels = np.array([p.disease for p in train]) + 1
            count, geo, small = cluster_size_stats(labels)
            vals.update({"n_clusters": count, "geo_mean_size": geo,
                         "n_small": small,
                         "partition_error": partition_error(labels, truth["clusters"])})
        elif method in PARTITION_METHODS:
            part = select_partition(trace, method)
            count, geo, small = cluster_size_stats(part.labels)
            vals = {"n_clusters": count, "geo_mean_size": geo, "n_small": small,
                    "partition_error": partition_error(part.labels, truth["clusters"])}
            if stage2_predict:
                refit = run_conditional_chain(
                    train, part, config,
                    rng=substream(seed, "refit", rep, method))
                vals.update(prediction_metrics(refit))
        else:
            raise ValueError(f"unknown method {method!r}")
        out[method] = vals
    return rep, out


def run_study(scenario, n_replicates, methods=("bma", "two-component", "avg-h"),
              config=None, n_train=200, n_test=5000, seed=0,
              stage2_predict=False, n_jobs=None):
    """Replicate study: generate, fit, and score every method.

    Each replicate draws a fresh training set and a fresh test set from
    the scenario.  Failures in single replicates are recorded in
    ``meta["failures"]`` rather than aborting the study.  Deterministic
    given ``seed`` regardless of worker scheduling.
    """
    config = config if config is not None else SamplerConfig()
    tasks = [(scenario, rep, tuple(methods), config, n_train, n_test, seed,
              stage2_predict) for rep in range(n_replicates)]
    workers = _max_workers(len(tasks)) if n_jobs is None else max(1, n_jobs)
    results, failures = {}, {}
    if workers == 1:
        for t in tasks:
            try:
                rep, vals = _replicate_worker(t)
                results[rep] = vals
            except Exception as exc:   # noqa: BLE001 - record, not fatal
                failures[t[1]] = repr(exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_replicate_worker, t): t[1] for t in tasks}
            for fut, rep in futures.items():
                try:
                    r, vals = fut.result()
                    results[r] = vals
                except Exception as exc:  # noqa: BLE001
                    failures[rep] = repr(exc)
    if not results:
        raise RuntimeError(f"every replicate failed: {failures}")
    raw = {}
    for rep in sorted(results):
        for method, vals in results[rep].items():
            for metric, value in vals.items():
                raw.setdefault(method, {}).setdefault(metric, []).append(value)
    meta = {"scenario": scenario.name, "n_replicates": n_replicates,
            "n_train": n_train, "n_test": n_test, "seed": seed,
            "failures": failures}
    return StudyReport.from_raw(raw, meta)


def _cv_worker(args):
    (patients, rep, holdout, methods, config, seed) = args
    n = len(patients)
    rng = substream(seed, "fold", rep)
    for _ in range(100):
        test_idx = rng.choice(n, size=holdout, replace=False)
        mask = np.zeros(n, dtype=bool)
        mask[test_idx] = True
        train = [patients[i] for i in range(n) if not mask[i]]
        if {p.disease for p in train} == {0, 1}:
            break
    else:
        raise RuntimeError("could not draw a two-class training split")
    test = [patients[i] for i in range(n) if mask[i]]
    test_labels = np.array([p.disease for p in test], dtype=float)
    out = {}
    bnp = None
    for method in methods:
        if method == "bma":
            tr = run_chain(train, config, rng=substream(seed, "cvchain", rep))
        elif method == "two-component":
            tr = run_two_component(train, config,
                                   rng=substream(seed, "cvtwocomp", rep))
        elif method in PARTITION_METHODS:
            if bnp is None:
                bnp = run_chain(train, config, rng=substream(seed, "cvchain", rep))
            part = select_partition(bnp, method)
            tr = run_conditional_chain(train, part, config,
                                       rng=substream(seed, "cvrefit", rep, method))
        else:
            raise ValueError(f"unknown method {method!r}")
        loss, err, auc = eval_metrics(prediction_matrix(tr, test).mean(axis=0),
                                      test_labels)
        out[method] = {"loss": loss, "pct_error": err, "auc": auc}
    return rep, out


def cross_validate(data, n_repeats=25, holdout=None, methods=("bma", "two-component"),
                   config=None, seed=0, n_jobs=None):
    """Repeated random-holdout cross validation (25 draws of roughly 20%
    of the patients by default).

    Single-class training splits are redrawn (up to 100 times per
    repeat); folds run concurrently with deterministically split random
    streams.  Returns a StudyReport whose metrics are held-out loss,
    misclassification fraction, and AUC.
    """
    patients = list(data)
    n = len(patients)
    if holdout is None:
        holdout = int(round(0.2 * n))
    if not (0 < holdout < n):
        raise ValueError("holdout size must be between 1 and n - 1")
    config = config if config is not None else SamplerConfig()
    tasks = [(patients, rep, holdout, tuple(methods), config, seed)
             for rep in range(n_repeats)]
    workers = _max_workers(len(tasks)) if n_jobs is None else max(1, n_jobs)
    results, failures = {}, {}
    if workers == 1:
        for t in tasks:
            try:
                rep, vals = _cv_worker(t)
                results[rep] = vals
            except Exception as exc:   # noqa: BLE001 - record, not fatal
                failures[t[1]] = repr(exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_cv_worker, t): t[1] for t in tasks}
            for fut, rep in futures.items():
                try:
                    r, vals = fut.result()
                    results[r] = vals
                except Exception as exc:  # noqa: BLE001
                    failures[rep] = repr(exc)
    if not results:
        raise RuntimeError(f"every fold failed: {failures}")
    raw = {}
    for rep in sorted(results):
        for method, vals in results[rep].items():
            for metric, value in vals.items():
                raw.setdefault(method, {}).setdefault(metric, []).append(value)
    meta = {"n_repeats": n_repeats, "n_train": n - holdout, "n_test": holdout,
            "seed": seed, "failures": failures}
    return StudyReport.from_raw(raw, meta)
