"""Command-line interface binding the library into reproducible
pipelines: simulate, fit, predict, partition, refit, study, cv, and
baseline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

import argparse
import sys

import numpy as np

from . import __version__
from .datasets import application_mimic_path
from .io import (
    DataError,
    load_longitudinal_csv,
    load_partition_csv,
    load_trace,
    save_trace,
    write_cluster_summary,
    write_dendrogram_json,
    write_index_table_json,
    write_longitudinal_csv,
    write_partition_csv,
    write_predictions_csv,
    write_replicates_jsonl,
    write_study_report_csv,
    write_study_report_json,
    write_truth_csv,
)
from .mcmc import SamplerConfig, run_chain, run_conditional_chain, run_two_component
from .partition import METHODS as PARTITION_METHODS
from .partition import agglomerate, coclustering, select_partition
from .prediction import bma_predict_many
from .rng import substream
from .simulate import cross_validate, generate_dataset, run_study, scenario_sim1, scenario_sim2


def _scenario(name):
    if name == "sim1":
        return scenario_sim1()
    if name == "sim2":
        return scenario_sim2()
    raise DataError(f"unknown scenario {name!r} (expected sim1 or sim2)")


def _sampler_config(args):
    kwargs = dict(seed=args.seed)
    if getattr(args, "iterations", None) is not None:
        kwargs["iterations"] = args.iterations
    if getattr(args, "burn_in", None) is not None:
        kwargs["burn_in"] = args.burn_in
    if getattr(args, "thin", None) is not None:
        kwargs["thin"] = args.thin
    trunc = getattr(args, "truncation", None)
    if trunc is not None:
        kwargs["truncation_H"] = trunc if trunc == "auto" else int(trunc)
    return SamplerConfig(**kwargs)


def _load_data(args):
    path = args.data
    if path == "mimic":
        path = application_mimic_path()
    return load_longitudinal_csv(path, log_transform=args.log)


def _cmd_simulate(args):
    sc = _scenario(args.scenario)
    patients, truth = generate_dataset(sc, args.n, substream(args.seed, "simulate"))
    write_longitudinal_csv(args.out, patients, seed=args.seed)
    if args.truth:
        write_truth_csv(args.truth, patients, truth, seed=args.seed)
    print(f"wrote {len(patients)} patients to {args.out}")
    return 0


def _cmd_fit(args):
    patients = _load_data(args)
    config = _sampler_config(args)
    trace = run_chain(patients, config)
    save_trace(args.out, trace)
    print(f"wrote {len(trace.draws)} draws to {args.out}")
    return 0


def _cmd_baseline(args):
    patients = _load_data(args)
    config = _sampler_config(args)
    trace = run_two_component(patients, config)
    save_trace(args.out, trace)
    print(f"wrote {len(trace.draws)} draws to {args.out}")
    return 0


def _cmd_predict(args):
    patients = _load_data(args)
    trace = load_trace(args.trace)
    results = bma_predict_many(trace, patients, interval_level=args.level)
    write_predictions_csv(args.out, [p.id for p in patients], results,
                          threshold=args.threshold, seed=args.seed,
                          config=trace.config)
    print(f"wrote {len(results)} predictions to {args.out}")
    return 0


def _cmd_partition(args):
    trace = load_trace(args.trace)
    patients = _load_data(args) if args.data else None
    ids = [p.id for p in patients] if patients else \
        [str(i + 1) for i in range(trace.draws[0].assignments.size)]
    part = select_partition(trace, args.method, h=args.h, k_max=args.kmax)
    write_partition_csv(args.out, ids, part, seed=args.seed, config=trace.config)
    if args.dendrogram:
        dendro = agglomerate(coclustering(trace),
                             "ward" if args.method.startswith("ward") else "average")
        write_dendrogram_json(args.dendrogram, dendro, seed=args.seed)
    if args.indices:
        write_index_table_json(args.indices, part, seed=args.seed)
    print(f"estimated {part.n_clusters} clusters by {args.method} -> {args.out}")
    return 0


def _cmd_refit(args):
    patients = _load_data(args)
    ids, labels = load_partition_csv(args.partition)
    if len(ids) != len(patients):
        raise DataError("partition does not cover the data")
    by_id = {p.id: i for i, p in enumerate(patients)}
    ordered = np.empty(len(patients), dtype=np.intp)
    for pid, lab in zip(ids, labels):
        if pid not in by_id:
            raise DataError(f"partition references unknown patient {pid!r}")
        ordered[by_id[pid]] = lab
    config = _sampler_config(args)
    trace = run_conditional_chain(patients, ordered, config)
    save_trace(args.out, trace)
    if args.summary:
        from .partition import PartitionEstimate
        part = PartitionEstimate(labels=ordered, method="supplied")
        times = np.concatenate([p.times for p in patients if p.n_obs > 0])
        grid = np.linspace(times.min(), times.max(), args.grid_points)
        write_cluster_summary(args.summary, trace, part, grid,
                              patient_ids=[p.id for p in patients],
                              seed=args.seed, config=config)
    print(f"wrote conditional trace to {args.out}")
    return 0


def _cmd_study(args):
    sc = _scenario(args.scenario)
    config = _sampler_config(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    report = run_study(sc, args.replicates, methods=methods, config=config,
                       n_train=args.train, n_test=args.test_size,
                       seed=args.seed, stage2_predict=args.stage2_predict)
    write_study_report_csv(args.out, report, seed=args.seed)
    if args.json:
        write_study_report_json(args.json, report, seed=args.seed)
    if args.raw:
        write_replicates_jsonl(args.raw, report, seed=args.seed)
    print(f"study complete: {args.replicates} replicates -> {args.out}")
    return 0


def _cmd_cv(args):
    patients = _load_data(args)
    config = _sampler_config(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    report = cross_validate(patients, n_repeats=args.folds, holdout=args.holdout,
                            methods=methods, config=config, seed=args.seed)
    write_study_report_csv(args.out, report, seed=args.seed)
    if args.json:
        write_study_report_json(args.json, report, seed=args.seed)
    print(f"cross-validation complete: {args.folds} folds -> {args.out}")
    return 0


def _add_sampler_flags(p):
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--truncation", default=None,
                   help="stick-breaking truncation (integer or 'auto')")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bnplc",
        description="Bayesian nonparametric classification of longitudinal profiles")
    parser.add_argument("--version", action="version", version=f"bnplc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--scenario", required=True, choices=["sim1", "sim2"])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None, help="also write true clusters CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the mixture model by MCMC")
    p.add_argument("--data", required=True, help="long CSV ('mimic' for bundled data)")
    p.add_argument("--log", action="store_true", help="apply natural log to values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="trace file (.jsonl or .jsonl.gz)")
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("baseline", help="fit the two-component baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--log", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("predict", help="model-averaged disease probabilities")
    p.add_argument("--trace", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--log", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--level", type=float, default=0.5,
                   help="credible-interval level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("partition", help="estimate a single patient partition")
    p.add_argument("--trace", required=True)
    p.add_argument("--data", default=None, help="optional CSV for patient ids")
    p.add_argument("--log", action="store_true")
    p.add_argument("--method", default="avg-h", choices=list(PARTITION_METHODS))
    p.add_argument("--h", type=float, default=0.75)
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="partition CSV")
    p.add_argument("--dendrogram", default=None, help="dendrogram JSON path")
    p.add_argument("--indices", default=None, help="index table JSON path")
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("refit", help="conditional refit on a fixed partition")
    p.add_argument("--data", required=True)
    p.add_argument("--log", action="store_true")
    p.add_argument("--partition", required=True, help="partition CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="conditional trace file")
    p.add_argument("--summary", default=None, help="cluster summary JSON path")
    p.add_argument("--grid-points", dest="grid_points", type=int, default=25)
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_refit)

    p = sub.add_parser("study", help="replicate simulation study")
    p.add_argument("--scenario", required=True, choices=["sim1", "sim2"])
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--test-size", dest="test_size", type=int, default=5000)
    p.add_argument("--methods", default="bma,two-component,avg-h")
    p.add_argument("--stage2-predict", dest="stage2_predict", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--json", default=None, help="report JSON path")
    p.add_argument("--raw", default=None, help="per-replicate JSONL path")
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("cv", help="repeated random-holdout cross validation")
    p.add_argument("--data", required=True)
    p.add_argument("--log", action="store_true")
    p.add_argument("--folds", type=int, default=25)
    p.add_argument("--holdout", type=int, default=None,
                   help="held-out patients per fold (default 20%%)")
    p.add_argument("--methods", default="bma,two-component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--json", default=None)
    _add_sampler_flags(p)
    p.set_defaults(func=_cmd_cv)

    return parser


def cli_dispatch(argv):
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
