"""Command-line workbench: generate, cluster, run, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure.
The data directory can be overridden with the ``WINGLOADS_DATA_DIR``
environment variable (the ``--out`` flag of ``generate``/``cluster`` wins
over both).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .clustering import (KMeansModel, Standardizer, assign_cluster, build_cluster_matrix,
                         elbow_select, kmeans_fit)
from .datafiles import read_dataset, write_dataset
from .dimred import PiecewisePolyModel
from .ensembles import derive_seed
from .evaluation import (ClusterSetup, ExperimentReport, LoadedReport, PipelineConfig,
                         compare_reports, ecdf_to_tsv, format_comparison, report_to_csv,
                         report_to_json, run_config)
from .wing import generate_dataset

DATA_ENV = "WINGLOADS_DATA_DIR"
TRAIN_VARIANT = 238

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text):
    return [t.strip().lower() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML workbench configuration")
    common.add_argument("--seed", type=int, help="override the dataset / experiment seed")
    common.add_argument("--out", type=Path, help="output directory of this command")

    p = _Parser(prog="wingloads", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("generate", parents=[common], help="write synthetic datasets per variant")
    g.add_argument("--n", type=int, help="rows per variant")
    c = sub.add_parser("cluster", parents=[common], help="cluster the training variant")
    c.add_argument("--k", type=int, help="force k and skip the elbow scan")
    r = sub.add_parser("run", parents=[common], help="run the configured experiments")
    r.add_argument("--configs", type=_int_list, help="e.g. 1,2,5,6")
    r.add_argument("--algos", type=_str_list, help="e.g. adb-rf,adb-dt,gbm")
    r.add_argument("--repeats", type=int)
    sub.add_parser("report", parents=[common], help="re-export and print a saved report")
    sub.add_parser("init", parents=[common], help="print the default configuration")
    return p


def _load_config(args) -> cfgmod.WorkbenchConfig:
    if args.config is None:
        cfg = cfgmod.WorkbenchConfig()
    else:
        if not args.config.exists():
            raise DataError(f"config file {args.config} not found")
        try:
            cfg = cfgmod.load(args.config)
        except (ValueError, TypeError) as exc:  # TOML syntax errors are ValueErrors
            raise UsageError(f"invalid config {args.config}: {exc}") from None
    if os.environ.get(DATA_ENV):
        cfg.paths.data_dir = os.environ[DATA_ENV]
    if args.seed is not None:
        cfg.dataset.seed = args.seed
        cfg.experiment.seed = args.seed
    return cfg


def _dataset_path(data_dir: Path, mtow: int) -> Path:
    return data_dir / f"wing_{mtow}t.csv"


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise DataError(f"directory {path} is not writable")
    return path


# ---------------------------------------------------------------- commands


def cmd_generate(cfg, args) -> int:
    out = _writable_dir(args.out or Path(cfg.paths.data_dir))
    if args.n is not None:
        if args.n < 0:
            raise UsageError("--n must be >= 0")
        cfg.dataset.n = args.n
        cfg.dataset.n_per_variant = {}
    for mtow in cfg.dataset.variants:
        n = cfg.dataset.rows_for(mtow)
        if n == 0:
            print(f"{mtow}t: n=0, skipped")
            continue
        ds = generate_dataset(cfg.geometry, mtow, n, derive_seed(cfg.dataset.seed, mtow),
                              cfg.dataset.noise_rel)
        path = write_dataset(ds, _dataset_path(out, mtow))
        print(f"{mtow}t: {len(ds)} rows x {ds.features.shape[1]} features + "
              f"{ds.outputs.shape[1]} outputs -> {path}")
    return EXIT_OK


def _read(path):
    try:
        return read_dataset(path)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise DataError(str(exc)) from None


def cmd_cluster(cfg, args) -> int:
    data_dir = Path(cfg.paths.data_dir)
    out = _writable_dir(args.out or data_dir)
    train, _ = _read(_dataset_path(data_dir, TRAIN_VARIANT))
    poly = PiecewisePolyModel(train.stations)
    M, std = build_cluster_matrix(train, poly)
    seed = cfg.experiment.seed
    k = args.k if args.k is not None else cfg.experiment.k
    if k and k > 0:
        if k > len(train):
            raise UsageError(f"k={k} exceeds the {len(train)} rows")
        model = min((kmeans_fit(M, k, seed=seed * 1000 + r) for r in range(5)),
                    key=lambda m: m.distortion)
        distortions = None
        print(f"k forced to {k}; elbow scan skipped")
    else:
        ks = range(1, min(cfg.experiment.k_max, len(train)) + 1)
        k, distortions, models = elbow_select(M, ks, seed=seed)
        model = models[k - 1]
        print("k  distortion")
        for kk, d in zip(ks, distortions):
            print(f"{kk:<2} {d:.6g}")
    print(f"chosen k = {k}; cluster sizes {np.bincount(model.labels, minlength=k).tolist()}")
    write_dataset(train, out / f"wing_{TRAIN_VARIANT}t_clustered.csv", labels=model.labels)
    doc = {"k": int(k), "seed": seed, "centroids": model.centroids.tolist(),
           "standardizer": {"mean": std.mean.tolist(), "scale": std.scale.tolist()},
           "poly": poly.to_dict(),
           "distortions": None if distortions is None else [float(d) for d in distortions]}
    (out / "clusters.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _load_clusters(data_dir: Path):
    path = data_dir / "clusters.json"
    if not path.exists():
        raise DataError(f"{path} not found; run `wingloads cluster` first")
    doc = json.loads(path.read_text())
    clustered, labels = _read(data_dir / f"wing_{TRAIN_VARIANT}t_clustered.csv")
    if labels is None:
        raise DataError("clustered dataset has no cluster column")
    return doc, clustered, labels


def cmd_run(cfg, args) -> int:
    e = cfg.experiment
    if args.configs is not None:
        e.configs = args.configs
    if args.algos is not None:
        e.algos = args.algos
    if args.repeats is not None:
        e.repeats = args.repeats
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data_dir = Path(cfg.paths.data_dir)
    out = _writable_dir(args.out or Path(cfg.paths.report_dir))
    doc, train, labels = _load_clusters(data_dir)
    poly = PiecewisePolyModel.from_dict(doc["poly"])
    std = Standardizer(np.asarray(doc["standardizer"]["mean"]),
                       np.asarray(doc["standardizer"]["scale"]))
    km = KMeansModel(np.asarray(doc["centroids"]), labels, float("nan"))
    validations = {}
    for mtow in cfg.dataset.variants:
        if mtow == TRAIN_VARIANT:
            continue
        path = _dataset_path(data_dir, mtow)
        if not path.exists():
            print(f"{mtow}t: no dataset, validation skipped")
            continue
        validations[mtow], _ = _read(path)
    val_labels = {v: assign_cluster(km, build_cluster_matrix(d, poly, std)[0])
                  for v, d in validations.items()}
    clusters = ClusterSetup(int(doc["k"]), labels, val_labels)
    report = ExperimentReport()
    for cid in e.configs:
        for algo in e.algos:
            t0 = time.perf_counter()
            pc = PipelineConfig(cid, algo, e.repeats, e.split_fraction, e.seed)
            frag = run_config(train, validations, pc, clusters)
            report.extend(frag)
            n_fail = sum(len(f.failures) for f in frag.fragments)
            print(f"config {cid} {algo}: {time.perf_counter() - t0:.1f} s"
                  + (f", {n_fail} failed repeat(s)" if n_fail else ""), file=sys.stderr)
    _write_report(report, out)
    print(format_comparison(compare_reports(report)))
    if not any(f.ok for f in report.fragments):
        print("every fragment failed", file=sys.stderr)
        for f in report.fragments:
            for fail in f.failures[:1]:
                print(f"  config {f.config_id} {f.algo} cluster {f.cluster}: {fail['error']}",
                      file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def _write_report(report, out: Path):
    (out / "report.json").write_text(report_to_json(report) + "\n")
    (out / "report.csv").write_text(report_to_csv(report))
    variants = sorted({v for s in report.to_dict()["fragments"] for v in s["ecdf"]})
    for v in variants:
        (out / f"ecdf_{v}.tsv").write_text(ecdf_to_tsv(report, v))


def cmd_report(cfg, args) -> int:
    src = Path(cfg.paths.report_dir) / "report.json"
    if not src.exists():
        raise DataError(f"{src} not found; run `wingloads run` first")
    try:
        report = LoadedReport.from_json(src.read_text())
    except ValueError as exc:
        raise DataError(f"{src}: {exc}") from None
    if args.out is not None:
        _write_report(report, _writable_dir(args.out))
    print(format_comparison(compare_reports(report)))
    return EXIT_OK


def cmd_init(cfg, args) -> int:
    text = cfgmod.dumps(cfg)
    if args.out is not None:
        _writable_dir(args.out)
        (args.out / "workbench.toml").write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "cluster": cmd_cluster, "run": cmd_run,
            "report": cmd_report, "init": cmd_init}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"wingloads: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"wingloads: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything unexpected is an internal failure
        print(f"wingloads: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
