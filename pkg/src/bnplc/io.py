"""File formats: long CSV for longitudinal data, JSON-lines posterior
traces (optionally gzipped), prediction/partition CSVs, dendrogram
JSON, study reports, and the per-cluster summary.

Every output embeds the seed, a configuration hash, and the library
version, as '#'-prefixed comment lines in CSV files or a meta record in
JSON files.
"""

import dataclasses
import gzip
import hashlib
import json
import warnings

import numpy as np

from . import __version__
from .mcmc import (
    PosteriorTrace,
    SamplerConfig,
    TwoComponentState,
    TwoComponentTrace,
)
from .model import (
    BaseMeasureHyper,
    DependenceParams,
    ModelState,
    Patient,
    eval_trajectory,
)

CSV_HEADER = ["patient_id", "disease", "day", "value"]


class DataError(Exception):
    """Malformed input data; carries the offending line when known."""


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(config):
    """Short stable digest of a configuration object."""
    payload = json.dumps(_jsonable(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _meta_dict(seed=None, config=None, extra=None):
    meta = {"version": __version__}
    if seed is not None:
        meta["seed"] = int(seed)
    if config is not None:
        meta["config_hash"] = config_hash(config)
    if extra:
        meta.update(extra)
    return meta


def _open_maybe_gz(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


# ---------------------------------------------------------------------------
# longitudinal CSV

def load_longitudinal_csv(path, log_transform=False):
    """Parse a long-format CSV (patient_id, disease, day, value).

    A blank disease field marks a patient whose status is to be
    predicted.  Rows are grouped by id and sorted by day; duplicate
    (id, day) rows are averaged with a warning so measurement times stay
    strictly increasing.  With ``log_transform`` the natural log is
    applied (nonpositive values are a data error).
    """
    rows = {}
    order = []
    with _open_maybe_gz(path, "r") as fh:
        line_no = 0
        header_seen = False
        for raw_line in fh:
            line_no += 1
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if not header_seen:
                if [p.lower() for p in parts] != CSV_HEADER:
                    raise DataError(f"{path}:{line_no}: expected header "
                                    f"{','.join(CSV_HEADER)}")
                header_seen = True
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            pid, disease_s, day_s, value_s = parts
            if not pid:
                raise DataError(f"{path}:{line_no}: empty patient_id")
            try:
                day = float(day_s)
                value = float(value_s)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
            if disease_s == "":
                disease = None
            elif disease_s in ("0", "1"):
                disease = int(disease_s)
            else:
                raise DataError(f"{path}:{line_no}: disease must be 0, 1, or blank")
            if log_transform:
                if value <= 0:
                    raise DataError(f"{path}:{line_no}: nonpositive value "
                                    f"{value} under log transform")
                value = float(np.log(value))
            if pid not in rows:
                rows[pid] = {"disease": disease, "obs": []}
                order.append(pid)
            else:
                if rows[pid]["disease"] != disease:
                    raise DataError(f"{path}:{line_no}: conflicting disease "
                                    f"labels for patient {pid}")
            rows[pid]["obs"].append((day, value))
    if not header_seen:
        raise DataError(f"{path}: empty file")

    patients = []
    for pid in order:
        rec = rows[pid]
        obs = sorted(rec["obs"])
        days = [d for d, _ in obs]
        if len(set(days)) != len(days):
            warnings.warn(f"patient {pid}: duplicate (id, day) rows averaged",
                          stacklevel=2)
            merged = {}
            for d, v in obs:
                merged.setdefault(d, []).append(v)
            obs = sorted((d, float(np.mean(vs))) for d, vs in merged.items())
        patients.append(Patient(pid, rec["disease"],
                                [d for d, _ in obs], [v for _, v in obs]))
    return patients


def write_longitudinal_csv(path, patients, seed=None, config=None):
    """Write patients in long format; values carry 17 significant digits
    so a round trip is bit exact."""
    with _open_maybe_gz(path, "w") as fh:
        for key, val in _meta_dict(seed, config).items():
            fh.write(f"# {key}: {val}\n")
        fh.write(",".join(CSV_HEADER) + "\n")
        for p in patients:
            d = "" if p.disease is None else str(int(p.disease))
            for t, y in zip(p.times, p.values):
                fh.write(f"{p.id},{d},{t:.17g},{y:.17g}\n")


def write_truth_csv(path, patients, truth, seed=None):
    """Companion file for simulated data: generating cluster per patient."""
    with _open_maybe_gz(path, "w") as fh:
        for key, val in _meta_dict(seed).items():
            fh.write(f"# {key}: {val}\n")
        fh.write("patient_id,cluster\n")
        for p, c in zip(patients, truth["clusters"]):
            fh.write(f"{p.id},{int(c) + 1}\n")


# ---------------------------------------------------------------------------
# posterior traces (JSON lines)

def _dep_dict(dep):
    return {"gamma2": dep.gamma2, "sigma2": dep.sigma2, "rho": dep.rho}


def _draw_record(iteration, state, trace):
    rec = {"record": "draw", "iteration": int(iteration)}
    if isinstance(state, TwoComponentState):
        rec.update(phi=state.phi, thetas=state.thetas.tolist(),
                   deps=[_dep_dict(d) for d in state.deps],
                   base={"theta_star": state.base.theta_star.tolist(),
                         "Sigma": state.base.Sigma.tolist(),
                         "a": state.base.a, "b": state.base.b},
                   diagnostics={"loglik": float(trace.loglik[iteration])})
        return rec
    rec.update(assignments=state.assignments.tolist(),
               sticks=state.sticks.tolist(),
               weights=state.weights.tolist(),
               clusters=[{"phi": float(p), "theta": t.tolist()}
                         for p, t in zip(state.phis, state.thetas)],
               dep=_dep_dict(state.dep),
               alpha=state.alpha,
               base={"theta_star": state.base.theta_star.tolist(),
                     "Sigma": state.base.Sigma.tolist(),
                     "a": state.base.a, "b": state.base.b},
               diagnostics={"cond_loglik": float(trace.cond_loglik[iteration]),
                            "marg_loglik": float(trace.marg_loglik[iteration]),
                            "nonempty": int(trace.nonempty_counts[iteration])})
    return rec


def save_trace(path, trace):
    """One retained draw per JSON line, preceded by a meta record; a
    ``.gz`` suffix selects the gzip-compressed variant with identical
    payload."""
    kind = "two_component" if isinstance(trace, TwoComponentTrace) else "bnp"
    meta = {"record": "meta", "model": kind,
            "seed": int(trace.seed),
            "config_hash": config_hash(trace.config),
            "config": _jsonable(trace.config),
            "accept_rates": _jsonable(trace.accept_rates),
            "version": __version__}
    with _open_maybe_gz(path, "w") as fh:
        fh.write(json.dumps(meta) + "\n")
        for it, state in zip(trace.retained_iterations, trace.draws):
            fh.write(json.dumps(_draw_record(it, state, trace)) + "\n")


def load_trace(path):
    """Rebuild a trace from JSON lines.

    Only retained draws are stored, so the per-iteration diagnostic
    arrays come back at retained-draw resolution and the restored config
    is normalized to burn_in 0 / thin 1 over those draws.
    """
    with _open_maybe_gz(path, "r") as fh:
        meta = json.loads(fh.readline())
        if meta.get("record") != "meta":
            raise DataError(f"{path}: missing meta record")
        records = [json.loads(line) for line in fh if line.strip()]
    cfg_dict = dict(meta["config"])
    cfg = SamplerConfig(
        iterations=max(len(records), 1), burn_in=0, thin=1,
        truncation_H=cfg_dict.get("truncation_H", "auto"),
        preliminary_iterations=cfg_dict.get("preliminary_iterations", 2000),
        seed=cfg_dict.get("seed", 0),
        conditional_skip=cfg_dict.get("conditional_skip", "paper"))
    iters = np.array([r["iteration"] for r in records], dtype=np.intp)

    if meta["model"] == "two_component":
        draws, loglik = [], []
        for r in records:
            base = BaseMeasureHyper(np.asarray(r["base"]["theta_star"]),
                                    np.asarray(r["base"]["Sigma"]),
                                    r["base"]["a"], r["base"]["b"])
            deps = tuple(DependenceParams(**d) for d in r["deps"])
            draws.append(TwoComponentState(phi=r["phi"],
                                           thetas=np.asarray(r["thetas"]),
                                           deps=deps, base=base))
            loglik.append(r["diagnostics"]["loglik"])
        return TwoComponentTrace(draws=draws, retained_iterations=iters,
                                 loglik=np.asarray(loglik),
                                 accept_rates=meta.get("accept_rates", {}),
                                 seed=meta["seed"], config=cfg)

    draws, cond, marg, nonempty = [], [], [], []
    for r in records:
        base = BaseMeasureHyper(np.asarray(r["base"]["theta_star"]),
                                np.asarray(r["base"]["Sigma"]),
                                r["base"]["a"], r["base"]["b"])
        draws.append(ModelState(
            assignments=np.asarray(r["assignments"], dtype=np.intp),
            sticks=np.asarray(r["sticks"]),
            weights=np.asarray(r["weights"]),
            phis=np.asarray([c["phi"] for c in r["clusters"]]),
            thetas=np.asarray([c["theta"] for c in r["clusters"]]),
            dep=DependenceParams(**r["dep"]),
            alpha=r["alpha"],
            base=base))
        cond.append(r["diagnostics"]["cond_loglik"])
        marg.append(r["diagnostics"]["marg_loglik"])
        nonempty.append(r["diagnostics"]["nonempty"])
    return PosteriorTrace(draws=draws, retained_iterations=iters,
                          cond_loglik=np.asarray(cond),
                          marg_loglik=np.asarray(marg),
                          nonempty_counts=np.asarray(nonempty, dtype=np.intp),
                          accept_rates=meta.get("accept_rates", {}),
                          seed=meta["seed"], config=cfg)


# ---------------------------------------------------------------------------
# predictions, partitions, dendrograms, reports

def write_predictions_csv(path, patient_ids, results, threshold=0.5,
                          seed=None, config=None):
    with _open_maybe_gz(path, "w") as fh:
        for key, val in _meta_dict(seed, config,
                                   {"threshold": threshold}).items():
            fh.write(f"# {key}: {val}\n")
        fh.write("patient_id,prob,lower,upper,classified\n")
        for pid, res in zip(patient_ids, results):
            cls = int(res.prob > threshold)
            fh.write(f"{pid},{res.prob:.17g},{res.interval[0]:.17g},"
                     f"{res.interval[1]:.17g},{cls}\n")


def write_partition_csv(path, patient_ids, partition, seed=None, config=None):
    with _open_maybe_gz(path, "w") as fh:
        meta = _meta_dict(seed, config, {"method": partition.method})
        for key, val in meta.items():
            fh.write(f"# {key}: {val}\n")
        fh.write("patient_id,cluster_label\n")
        for pid, lab in zip(patient_ids, partition.labels):
            fh.write(f"{pid},{int(lab)}\n")


def load_partition_csv(path):
    """Returns (patient_ids, labels array)."""
    ids, labels = [], []
    with _open_maybe_gz(path, "r") as fh:
        header_seen = False
        for line_no, raw_line in enumerate(fh, start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line.lower() != "patient_id,cluster_label":
                    raise DataError(f"{path}:{line_no}: bad partition header")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{line_no}: expected 2 fields")
            ids.append(parts[0])
            try:
                labels.append(int(parts[1]))
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad cluster label") from None
    return ids, np.asarray(labels, dtype=np.intp)


def write_dendrogram_json(path, dendro, seed=None, config=None):
    """Merge list (left, right, height) sufficient for external plotting."""
    payload = {
        "_meta": _meta_dict(seed, config),
        "n_leaves": dendro.n_leaves,
        "linkage": dendro.linkage,
        "merges": [{"left": int(l), "right": int(r), "height": float(h)}
                   for l, r, h in dendro.merges],
    }
    with _open_maybe_gz(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def write_index_table_json(path, partition, seed=None):
    payload = {"_meta": _meta_dict(seed),
               "method": partition.method,
               "n_clusters": partition.n_clusters,
               "index_values": {str(k): v for k, v in partition.index_values.items()}}
    with _open_maybe_gz(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def write_study_report_csv(path, report, seed=None):
    with _open_maybe_gz(path, "w") as fh:
        meta = _meta_dict(seed, extra={f"meta_{k}": v for k, v in
                                       report.meta.items() if k != "failures"})
        for key, val in meta.items():
            fh.write(f"# {key}: {val}\n")
        fh.write("method,metric,mean,sd\n")
        for method, metrics in report.metrics.items():
            for metric, (mean, sd) in metrics.items():
                fh.write(f"{method},{metric},{mean:.17g},{sd:.17g}\n")


def write_study_report_json(path, report, seed=None):
    payload = {"_meta": _meta_dict(seed), "meta": _jsonable(report.meta),
               "metrics": _jsonable(report.metrics)}
    with _open_maybe_gz(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def write_replicates_jsonl(path, report, seed=None):
    """Per-replicate raw metric values, one JSON record per line."""
    with _open_maybe_gz(path, "w") as fh:
        fh.write(json.dumps({"record": "meta", **_meta_dict(seed),
                             "meta": _jsonable(report.meta)}) + "\n")
        n_rep = max(len(v) for m in report.raw.values() for v in m.values())
        for r in range(n_rep):
            rec = {"record": "replicate", "index": r}
            for method, metrics in report.raw.items():
                rec[method] = {metric: values[r]
                               for metric, values in metrics.items()
                               if r < len(values)}
            fh.write(json.dumps(_jsonable(rec)) + "\n")


# ---------------------------------------------------------------------------
# cluster summary from a conditional refit

def cluster_summary(conditional_trace, partition, grid, patient_ids=None,
                    interval_level=0.95):
    """Per-cluster summary: size, disease-rate posterior, and the mean
    trajectory evaluated on the time grid.

    Requires an identified (label-switch-free) trace, i.e. one from a
    conditional refit with the same partition.
    """
    grid = np.asarray(grid, dtype=float)
    labels = partition.labels
    k = partition.n_clusters
    phis = np.stack([d.phis for d in conditional_trace.draws])
    thetas = np.stack([d.thetas for d in conditional_trace.draws])
    if phis.shape[1] < k:
        raise ValueError("trace has fewer components than the partition")
    lo_q, hi_q = (1 - interval_level) / 2, (1 + interval_level) / 2
    clusters = []
    for h in range(k):
        members = np.flatnonzero(labels == h + 1)
        mean_theta = thetas[:, h, :].mean(axis=0)
        clusters.append({
            "cluster": h + 1,
            "size": int(members.size),
            "disease_rate_mean": float(phis[:, h].mean()),
            "disease_rate_interval": [float(np.quantile(phis[:, h], lo_q)),
                                      float(np.quantile(phis[:, h], hi_q))],
            "mean_theta": mean_theta.tolist(),
            "trajectory": eval_trajectory(mean_theta, grid).tolist(),
            "members": ([patient_ids[i] for i in members] if patient_ids
                        else members.tolist()),
        })
    return {"grid": grid.tolist(), "interval_level": interval_level,
            "clusters": clusters}


def write_cluster_summary(path, conditional_trace, partition, grid,
                          patient_ids=None, seed=None, config=None):
    payload = cluster_summary(conditional_trace, partition, grid, patient_ids)
    payload["_meta"] = _meta_dict(seed, config)
    with _open_maybe_gz(path, "w") as fh:
        json.dump(payload, fh, indent=1)
