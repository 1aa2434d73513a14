"""Scores, repeated split experiments and extrapolation reports.

A run fits, for each cluster of the training variant, an input codec, an
output codec and a regressor on a random 80 % split, then scores the
decoded predictions on the learning rows, the held-out 20 % and every
heavier validation variant. Scores are always taken in the raw
29-station space.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .clustering import Standardizer, assign_cluster, build_cluster_matrix, elbow_select, kmeans_fit
from .dimred import InputCodec, OutputCodec, PiecewisePolyModel
from .ensembles import (AdaBoostR2Regressor, BaggingRegressor, GradientBoostingRegressor,
                        MultiOutputRegressor, RandomForestRegressor, derive_seed)
from .trees import TreeParams, cart_fit

# --------------------------------------------------------------- metrics


def r2_per_station(Y_true, Y_pred):
    """Coefficient of determination at every station and their mean.

    A station with no spread in ``Y_true`` scores 1 when predicted exactly
    and is otherwise left out of the mean (reported as NaN) with a warning.
    Returns ``(r2, mean_r2, n_excluded)``.
    """
    Y_true = np.asarray(Y_true, dtype=float)
    Y_pred = np.asarray(Y_pred, dtype=float)
    if Y_true.shape != Y_pred.shape:
        raise ValueError(f"shape mismatch {Y_true.shape} vs {Y_pred.shape}")
    if Y_true.ndim == 1:
        Y_true, Y_pred = Y_true[:, None], Y_pred[:, None]
    if Y_true.shape[0] < 2:
        raise ValueError("R² needs at least 2 rows")
    sse = np.sum((Y_true - Y_pred) ** 2, axis=0)
    sst = np.sum((Y_true - Y_true.mean(axis=0)) ** 2, axis=0)
    r2 = np.full(sse.shape, np.nan)
    live = sst > 0
    r2[live] = 1.0 - sse[live] / sst[live]
    r2[~live & (sse == 0)] = 1.0
    excluded = int(np.sum(np.isnan(r2)))
    if excluded:
        warnings.warn(f"{excluded} zero-variance station(s) excluded from the mean R²",
                      RuntimeWarning, stacklevel=2)
    mean = float(np.nanmean(r2)) if excluded < r2.size else float("nan")
    return r2, mean, excluded


def error_rate(curve_true, curve_pred) -> np.ndarray | float:
    """Root of squared prediction error over squared true curve.

    Accepts single curves or matrices of curves (one per row).
    """
    T = np.asarray(curve_true, dtype=float)
    P = np.asarray(curve_pred, dtype=float)
    if T.shape != P.shape:
        raise ValueError(f"shape mismatch {T.shape} vs {P.shape}")
    single = T.ndim == 1
    T, P = np.atleast_2d(T), np.atleast_2d(P)
    denom = np.sum(T * T, axis=1)
    zero = np.flatnonzero(denom == 0)
    if zero.size:
        raise ValueError(f"true curve of row {zero[0]} is identically zero")
    err = np.sqrt(np.sum((P - T) ** 2, axis=1) / denom)
    return float(err[0]) if single else err


DEFAULT_ALPHAS = np.round(np.linspace(0.0, 0.30, 61), 10)


@dataclass(frozen=True)
class EcdfSummary:
    alphas: np.ndarray
    G: np.ndarray
    p_le_2pct: float
    p_le_10pct: float
    mean_error: float
    n: int


def error_ecdf(errors, alphas=None) -> EcdfSummary:
    """Empirical CDF ``G(a) = #{error <= a} / n`` at ``alphas``."""
    e = np.sort(np.asarray(errors, dtype=float).ravel())
    if e.size == 0:
        raise ValueError("no errors to summarize")
    a = DEFAULT_ALPHAS if alphas is None else np.asarray(alphas, dtype=float)
    G = np.searchsorted(e, a, side="right") / e.size
    frac = lambda x: float(np.searchsorted(e, x, side="right") / e.size)
    return EcdfSummary(a, G, frac(0.02), frac(0.10), float(e.mean()), int(e.size))


# --------------------------------------------------------- configurations

CONFIG_CODECS = {
    1: ("raw", "raw"), 2: ("raw", "pca"), 3: ("raw", "poly"), 4: ("raw", "poly_pca"),
    5: ("pca", "raw"), 6: ("pca", "pca"), 7: ("pca", "poly"), 8: ("pca", "poly_pca"),
}
ALGOS = ("adb-dt", "adb-rf", "rf", "bagging", "gbm", "dt")

# tuned values per (cluster, column); polynomial configs borrow the PCA-output column
_HP_COLUMN = {1: 0, 2: 1, 3: 1, 4: 1, 5: 2, 6: 3, 7: 3, 8: 3}
_HP_TABLE = {
    "rf": {"min_samples_leaf": ([5, 2, 5, 2], [3, 10, 5, 3]),
           "min_samples_split": ([10, 11, 3, 12], [14, 6, 8, 10]),
           "n_estimators": ([144, 192, 173, 201], [210, 161, 239, 133])},
    "adb-rf": {"learning_rate": ([0.95, 0.92, 0.98, 0.96], [0.90, 1.07, 0.92, 1.06]),
               "n_estimators": ([31, 29, 34, 25], [34, 47, 49, 38]),
               "forest_estimators": ([19, 23, 11, 13], [22, 24, 24, 12]),
               "min_samples_leaf": ([17, 15, 4, 3], [6, 3, 2, 9]),
               "min_samples_split": ([13, 17, 4, 17], [7, 7, 4, 17])},
    "dt": {"min_samples_leaf": ([4, 3, 3, 2], [17, 19, 15, 3]),
           "min_samples_split": ([9, 7, 12, 7], [18, 15, 12, 6])},
    "adb-dt": {"learning_rate": ([1.09, 0.96, 1.07, 0.93], [1.03, 0.93, 0.93, 1.02]),
               "n_estimators": ([89, 117, 133, 143], [156, 230, 234, 172])},
    "bagging": {"n_estimators": ([186, 183, 149, 146], [179, 222, 216, 156])},
    "gbm": {"max_depth": ([8, 10, 10, 13], [15, 14, 14, 14]),
            "learning_rate": ([0.92, 0.90, 0.90, 0.97], [0.91, 0.99, 0.94, 0.92]),
            "n_estimators": ([42, 46, 52, 67], [161, 149, 69, 65])},
}
# these reuse the single-tree limits of the same column
_USES_DT = ("adb-dt", "bagging")


def default_hyperparameters(algo: str, config_id: int, cluster: int) -> dict:
    """Tuned hyperparameters for ``algo`` under ``config_id`` in ``cluster``.

    Clusters beyond the two tabulated ones reuse them alternately.
    """
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}; use one of {ALGOS}")
    if config_id not in CONFIG_CODECS:
        raise ValueError(f"config_id must be 1..8, got {config_id}")
    col = _HP_COLUMN[config_id]
    c = cluster % 2
    hp = {k: v[c][col] for k, v in _HP_TABLE[algo].items()}
    if algo in _USES_DT:
        hp.update({k: v[c][col] for k, v in _HP_TABLE["dt"].items()})
    return hp


def make_model(algo: str, hp: dict, seed: int, n_features: int, n_outputs: int):
    """Unfitted regressor for ``algo``; boosting methods get one model per output."""
    # untuned forest settings stay at the usual library default: every feature is a candidate
    m = min(n_features, hp.get("max_features", n_features))
    leaf = TreeParams(min_samples_leaf=hp.get("min_samples_leaf", 1),
                      min_samples_split=hp.get("min_samples_split", 2))
    if algo == "rf":
        return RandomForestRegressor(hp["n_estimators"], leaf, m, seed=seed)
    if algo == "bagging":
        return BaggingRegressor(hp["n_estimators"], leaf, seed=seed)
    if algo == "dt":
        return _SingleTree(leaf)
    if algo == "adb-dt":
        factory = lambda s: AdaBoostR2Regressor(hp["n_estimators"], hp["learning_rate"], "tree",
                                                leaf, seed=s)
    elif algo == "adb-rf":
        factory = lambda s: AdaBoostR2Regressor(hp["n_estimators"], hp["learning_rate"], "forest",
                                                leaf, hp["forest_estimators"], m, seed=s)
    elif algo == "gbm":
        factory = lambda s: GradientBoostingRegressor(hp["n_estimators"], hp["learning_rate"],
                                                      TreeParams(max_depth=hp["max_depth"]), seed=s)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    return MultiOutputRegressor(factory, seed)


class _SingleTree:
    def __init__(self, params):
        self.params = params

    def fit(self, X, Y):
        self.tree_ = cart_fit(X, Y, self.params)
        return self

    def predict(self, X):
        return self.tree_.predict(X)


def _predict_rows(model, X, training: bool):
    # boosted models can replay the predictions made while fitting
    if training and hasattr(model, "predict_training"):
        return model.predict_training()
    return model.predict(X)


@dataclass
class PipelineConfig:
    """One configuration of the grid, i.e. codec pair plus algorithm."""

    config_id: int
    algo: str = "adb-rf"
    n_repeats: int = 5
    split_fraction: float = 0.8
    seed: int = 0
    hyperparameters: dict | None = None  # overrides for every cluster
    input_pca_threshold: float = 0.99
    output_pca_threshold: float = 0.9999
    poly_pca_components: int = 4

    def __post_init__(self):
        if self.config_id not in CONFIG_CODECS:
            raise ValueError(f"config_id must be 1..8, got {self.config_id}")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; use one of {ALGOS}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")

    @property
    def input_codec(self) -> str:
        return CONFIG_CODECS[self.config_id][0]

    @property
    def output_codec(self) -> str:
        return CONFIG_CODECS[self.config_id][1]

    def hyperparameters_for(self, cluster: int) -> dict:
        hp = default_hyperparameters(self.algo, self.config_id, cluster)
        hp.update(self.hyperparameters or {})
        return hp


# ------------------------------------------------------------- clustering


@dataclass
class ClusterSetup:
    """Cluster membership of the training variant and of each validation variant."""

    k: int
    train_labels: np.ndarray
    validation_labels: dict
    distortions: np.ndarray | None = None
    centroids: np.ndarray | None = None
    standardizer: Standardizer | None = None

    @classmethod
    def single(cls, train, validations) -> "ClusterSetup":
        return cls(1, np.zeros(len(train), np.int64),
                   {v: np.zeros(len(d), np.int64) for v, d in validations.items()})


def fit_clusters(train, validations: dict, k: int | None = None, seed: int = 0,
                 k_range=range(1, 9)) -> ClusterSetup:
    """Cluster the training variant; heavier variants join the nearest centroid."""
    poly = PiecewisePolyModel(train.stations)
    M, std = build_cluster_matrix(train, poly)
    distortions = None
    if k is None:
        k, distortions, models = elbow_select(M, k_range, seed=seed)
        model = models[list(k_range).index(k)]
    else:
        model = min((kmeans_fit(M, k, seed=seed * 1000 + r) for r in range(5)),
                    key=lambda m: m.distortion)
    val = {v: assign_cluster(model, build_cluster_matrix(d, poly, std)[0])
           for v, d in validations.items()}
    return ClusterSetup(k, model.labels, val, distortions, model.centroids, std)


# ---------------------------------------------------------------- running

SPLITS = ("learning", "test")


def split_indices(n: int, fraction: float, seed: int, repeat: int):
    """Seeded random partition into learning and test rows."""
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), int(repeat)])).permutation(n)
    cut = int(round(fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def _stats(values):
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std())} if v.size else {"mean": None, "std": None}


@dataclass
class Fragment:
    """Scores of one (config, algorithm, cluster) over all repeats."""

    config_id: int
    algo: str
    cluster: int
    scores: dict = field(default_factory=dict)       # split -> list of per-repeat mean R²
    errors: dict = field(default_factory=dict)       # variant -> list of per-row error rates
    failures: list = field(default_factory=list)
    sizes: dict = field(default_factory=dict)
    reduced_width: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return any(len(v) for v in self.scores.values())

    def summary(self) -> dict:
        out = {"config_id": self.config_id, "algo": self.algo, "cluster": self.cluster,
               "n_repeats_ok": len(self.scores.get("test", [])),
               "scores": {k: _stats(v) for k, v in self.scores.items()},
               "sizes": self.sizes, "output_width": self.reduced_width,
               "failures": self.failures, "ecdf": {}}
        for variant, errs in self.errors.items():
            if errs:
                e = error_ecdf(errs)
                out["ecdf"][variant] = {"alphas": e.alphas.tolist(), "G": e.G.tolist(),
                                        "p_le_2pct": e.p_le_2pct, "p_le_10pct": e.p_le_10pct,
                                        "mean_error": e.mean_error, "n": e.n}
        return out


@dataclass
class ExperimentReport:
    fragments: list = field(default_factory=list)

    def extend(self, other: "ExperimentReport") -> "ExperimentReport":
        self.fragments.extend(other.fragments)
        return self

    def sorted_fragments(self):
        # keyed order so the report never depends on completion order
        return sorted(self.fragments, key=lambda f: (f.config_id, f.algo, f.cluster))

    def to_dict(self) -> dict:
        return {"fragments": [f.summary() for f in self.sorted_fragments()]}

    def get(self, config_id, algo, cluster) -> Fragment:
        for f in self.fragments:
            if (f.config_id, f.algo, f.cluster) == (config_id, algo, cluster):
                return f
        raise KeyError((config_id, algo, cluster))


class LoadedReport:
    """A report read back from its JSON form; supports the export functions."""

    def __init__(self, data: dict):
        if "fragments" not in data:
            raise ValueError("not a report document: missing 'fragments'")
        self._data = data

    @classmethod
    def from_json(cls, text: str) -> "LoadedReport":
        return cls(json.loads(text))

    def to_dict(self) -> dict:
        return self._data


def variant_key(mtow) -> str:
    return f"val{int(mtow)}"


def run_config(train, validations: dict, config: PipelineConfig,
               clusters: ClusterSetup | None = None) -> ExperimentReport:
    """Repeated split experiment of one configuration.

    ``validations`` maps a weight label (e.g. 242) to its dataset.
    ``clusters`` defaults to a single cluster holding every row.
    """
    clusters = clusters or ClusterSetup.single(train, validations)
    frags = {c: Fragment(config.config_id, config.algo, c,
                         scores={s: [] for s in SPLITS + tuple(variant_key(v) for v in validations)},
                         errors={variant_key(v): [] for v in validations})
             for c in range(clusters.k)}
    for rep in range(config.n_repeats):
        learn, test = split_indices(len(train), config.split_fraction, config.seed, rep)
        for c in range(clusters.k):
            frag = frags[c]
            try:
                _run_cluster(train, validations, config, clusters, c, rep, learn, test, frag)
            except Exception as exc:  # recorded, the experiment goes on
                frag.failures.append({"repeat": rep, "error": f"{type(exc).__name__}: {exc}"})
    return ExperimentReport(list(frags.values()))


def fit_cluster_model(train, rows, config: PipelineConfig, cluster: int, seed: int):
    """Fit the codecs and regressor of ``config`` on ``train[rows]``.

    Returns ``(input_codec, output_codec, model)``; the model maps encoded
    inputs to encoded outputs.
    """
    rows = np.asarray(rows)
    incodec = InputCodec(config.input_codec, config.input_pca_threshold).fit(train.features[rows])
    outcodec = OutputCodec(config.output_codec, config.output_pca_threshold,
                           config.poly_pca_components).fit(train.outputs[rows], train.stations)
    X = incodec.encode(train.features[rows])
    R = outcodec.encode(train.outputs[rows])
    model = make_model(config.algo, config.hyperparameters_for(cluster), seed, X.shape[1],
                       R.shape[1])
    model.fit(X, R)
    return incodec, outcodec, model


def _run_cluster(train, validations, config, clusters, c, rep, learn, test, frag):
    lab = clusters.train_labels
    L = learn[lab[learn] == c]
    T = test[lab[test] == c]
    if len(L) < 2 or len(T) < 2:
        raise ValueError(f"cluster {c} has too few rows ({len(L)} learning, {len(T)} test)")
    incodec, outcodec, model = fit_cluster_model(train, L, config, c,
                                                 derive_seed(config.seed, rep, c))
    XL = incodec.encode(train.features[L])

    def predict(X, training=False):
        return outcodec.decode(np.asarray(_predict_rows(model, X, training)).reshape(len(X), -1))

    scored = {"learning": (train.outputs[L], predict(XL, training=True)),
              "test": (train.outputs[T], predict(incodec.encode(train.features[T])))}
    sizes = {"learning": len(L), "test": len(T)}
    val_errors = {}
    for v, d in validations.items():
        rows = np.flatnonzero(clusters.validation_labels[v] == c)
        key = variant_key(v)
        sizes[key] = len(rows)
        if len(rows) < 2:
            continue
        pred = predict(incodec.encode(d.features[rows]))
        scored[key] = (d.outputs[rows], pred)
        val_errors[key] = error_rate(d.outputs[rows], pred)
    results = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for key, (yt, yp) in scored.items():
            results[key] = r2_per_station(yt, yp)[1]
    # commit only once the whole repeat succeeded
    for key, val in results.items():
        frag.scores[key].append(val)
    for key, e in val_errors.items():
        frag.errors[key].extend(e.tolist())
    frag.reduced_width.append(outcodec.width)
    frag.sizes = sizes


# ------------------------------------------------------------- reporting


def _validation_mean(summary) -> float:
    vals = [s["mean"] for k, s in summary["scores"].items()
            if k.startswith("val") and s["mean"] is not None]
    return float(np.mean(vals)) if vals else -math.inf


def _validation_std(summary) -> float:
    vals = [s["std"] for k, s in summary["scores"].items()
            if k.startswith("val") and s["std"] is not None]
    return float(np.mean(vals)) if vals else math.inf


def compare_reports(report: ExperimentReport) -> list:
    """Ranking table per cluster by mean validation score (ties: lower std).

    Each row flags the cluster's best entry and, where the matching
    raw-output configuration was also run, whether PCA on outputs beat it.
    """
    summaries = report.to_dict()["fragments"]
    by_key = {(s["config_id"], s["algo"], s["cluster"]): s for s in summaries}
    rows = []
    for cluster in sorted({s["cluster"] for s in summaries}):
        group = [s for s in summaries if s["cluster"] == cluster]
        group.sort(key=lambda s: (-_validation_mean(s), _validation_std(s), s["config_id"], s["algo"]))
        for rank, s in enumerate(group, 1):
            pca_beats = None
            cin, cout = CONFIG_CODECS[s["config_id"]]
            if cout == "pca":
                raw_id = next(i for i, io_ in CONFIG_CODECS.items() if io_ == (cin, "raw"))
                other = by_key.get((raw_id, s["algo"], cluster))
                if other is not None:
                    pca_beats = _validation_mean(s) > _validation_mean(other)
            rows.append({"cluster": cluster, "rank": rank, "config_id": s["config_id"],
                         "algo": s["algo"], "validation_mean": _validation_mean(s),
                         "validation_std": _validation_std(s),
                         "test_mean": s["scores"].get("test", {}).get("mean"),
                         "best": rank == 1, "output_pca_beats_raw": pca_beats})
    return rows


def format_comparison(rows) -> str:
    head = f"{'cluster':>7} {'rank':>4} {'config':>6} {'algo':>8} {'test':>8} {'val':>8} {'val_std':>8}  flags"
    lines = [head]
    for r in rows:
        flags = []
        if r["best"]:
            flags.append("best")
        if r["output_pca_beats_raw"] is not None:
            flags.append("pca>raw" if r["output_pca_beats_raw"] else "pca<=raw")
        fmt = lambda x: "     nan" if x is None or not np.isfinite(x) else f"{x:8.4f}"
        lines.append(f"{r['cluster']:>7} {r['rank']:>4} {r['config_id']:>6} {r['algo']:>8} "
                     f"{fmt(r['test_mean'])} {fmt(r['validation_mean'])} {fmt(r['validation_std'])}  "
                     + ",".join(flags))
    return "\n".join(lines)


def report_to_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True)


def report_to_csv(report: ExperimentReport) -> str:
    """One row per fragment with mean/std per split and ECDF statistics per variant."""
    summaries = report.to_dict()["fragments"]
    splits = sorted({k for s in summaries for k in s["scores"]},
                    key=lambda k: (k not in SPLITS, SPLITS.index(k) if k in SPLITS else k))
    variants = sorted({k for s in summaries for k in s["ecdf"]})
    header = ["config_id", "cluster", "algo"]
    header += [f"{k}_{stat}" for k in splits for stat in ("mean", "std")]
    header += [f"{v}_{stat}" for v in variants for stat in ("p_le_2pct", "p_le_10pct", "mean_error")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for s in summaries:
        row = [s["config_id"], s["cluster"], s["algo"]]
        for k in splits:
            st = s["scores"].get(k, {"mean": None, "std": None})
            row += [_num(st["mean"]), _num(st["std"])]
        for v in variants:
            e = s["ecdf"].get(v)
            row += [_num(e and e["p_le_2pct"]), _num(e and e["p_le_10pct"]), _num(e and e["mean_error"])]
        w.writerow(row)
    return buf.getvalue()


def ecdf_to_tsv(report: ExperimentReport, variant: str) -> str:
    """Long-format (config, cluster, algo, alpha, G) table for one variant."""
    lines = ["config_id\tcluster\talgo\talpha\tG"]
    for s in report.to_dict()["fragments"]:
        e = s["ecdf"].get(variant)
        if e is None:
            continue
        for a, g in zip(e["alphas"], e["G"]):
            lines.append(f"{s['config_id']}\t{s['cluster']}\t{s['algo']}\t{a!r}\t{g!r}")
    return "\n".join(lines) + "\n"


def _num(x):
    return "" if x is None else repr(float(x))
