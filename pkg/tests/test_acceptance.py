"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to watch progress; the
terminal summary lists every criterion either way.
"""

import time

import numpy as np
import pytest

from wingloads import clustering
from wingloads.clustering import build_cluster_matrix, elbow_select
from wingloads.dimred import OutputCodec, PiecewisePolyModel, pca_fit, row_r2
from wingloads.ensembles import AdaBoostR2Regressor, derive_seed, gbm_fit, weighted_median
from wingloads.evaluation import (PipelineConfig, error_ecdf, error_rate, fit_clusters,
                                  r2_per_station, run_config)
from wingloads.trees import TreeParams, cart_fit
from wingloads.wing import WingGeometry, generate_dataset, shear_and_moment

GEOM = WingGeometry()
VARIANTS = (242, 247, 251)


def _variants(n, seed):
    train = generate_dataset(GEOM, 238, n, derive_seed(seed, 238))
    return train, {m: generate_dataset(GEOM, m, n, derive_seed(seed, m)) for m in VARIANTS}


def _sse(Y):
    return float(((Y - Y.mean(axis=0)) ** 2).sum())


# ----------------------------------------------------------------- 1. beam


def test_criterion_01_beam_oracle(criterion):
    with criterion(1, "beam shear/moment oracle") as info:
        t0 = time.perf_counter()
        L, q0 = GEOM.span_L, 4.0e4

        def rel_errors(n):
            x = np.linspace(0.0, L, n)
            out = {}
            for name, q, V, M in [
                ("constant", np.full(n, q0), -q0 * (L - x), q0 * (L - x) ** 2 / 2),
                ("triangular", q0 * (1 - x / L), -q0 * (L - x) ** 2 / (2 * L),
                 q0 * (L - x) ** 3 / (6 * L)),
            ]:
                Vn, Mn = shear_and_moment(q, x)
                out[name] = max(np.abs(Vn - V).max() / np.abs(V).max(),
                                np.abs(Mn - M).max() / np.abs(M).max())
            return out

        fine = rel_errors(1000)
        coarse = rel_errors(250)
        h_ratio = (1000 - 1) / (250 - 1)
        order = np.log(coarse["triangular"] / fine["triangular"]) / np.log(h_ratio)
        elapsed = time.perf_counter() - t0
        info["detail"] = (f"rel err const {fine['constant']:.1e}, tri {fine['triangular']:.1e}; "
                          f"order {order:.3f}; {elapsed:.3f} s")
        assert fine["constant"] < 1e-6 and fine["triangular"] < 1e-6
        assert abs(order - 2.0) <= 0.3
        assert elapsed < 1.0


# ------------------------------------------------------- 2. dim. reduction


def test_criterion_02_reduction_fidelity(criterion):
    with criterion(2, "dimension-reduction fidelity, n=5000") as info:
        t0 = time.perf_counter()
        ds = generate_dataset(GEOM, 238, 5000, derive_seed(2024, 238))
        poly = PiecewisePolyModel(ds.stations)
        r2_poly = row_r2(ds.outputs, poly.evaluate(poly.fit(ds.outputs)))
        pca = pca_fit(ds.outputs, 0.9999)
        codec = OutputCodec("poly_pca", poly_pca_components=4).fit(ds.outputs, ds.stations)
        frac = float(np.mean(codec.train_row_r2 >= 0.999))
        elapsed = time.perf_counter() - t0
        info["detail"] = (f"poly min row R2 {r2_poly.min():.5f}; PCA r={pca.retained_r} "
                          f"explains {pca.explained_variance_ratio:.6f}; poly+PCA(4) "
                          f"{100 * frac:.2f}% rows >= 0.999; {elapsed:.1f} s")
        assert np.all(r2_poly >= 0.999)
        assert pca.retained_r <= 6 and pca.explained_variance_ratio >= 0.9999
        assert codec.width == 4 and frac >= 0.99
        assert elapsed < 30.0


# ------------------------------------------------------------------ 3. CART


def _exhaustive_root(X, y):
    parent = _sse(y)
    best = (0.0, None, None)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            m = X[:, j] <= thr
            gain = parent - _sse(y[m]) - _sse(y[~m])
            if gain > best[0] * (1 + 1e-9) + 1e-300:
                best = (gain, j, thr)
    return best


def test_criterion_03_cart_oracle(criterion):
    with criterion(3, "CART root split vs exhaustive search, 200 datasets") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        worst_leaf = 0.0
        for i in range(200):
            n, p = int(rng.integers(2, 13)), int(rng.integers(1, 3))
            X = rng.integers(0, 6, size=(n, p)).astype(float) + (rng.uniform(size=(n, p))
                                                                 if i % 2 else 0.0)
            y = rng.normal(size=n) * 10
            gain, j, thr = _exhaustive_root(X, y)
            stump = cart_fit(X, y, TreeParams(max_depth=1))
            if j is None:
                assert stump.n_leaves == 1, f"dataset {i}: split found where none exists"
            else:
                assert (stump.feature[0], stump.threshold[0]) == (j, thr), f"dataset {i}"
            full = cart_fit(X, y)
            leaves = full.apply(X)
            for leaf in np.unique(leaves):
                dev = abs(full.value[leaf, 0] - y[leaves == leaf].mean())
                worst_leaf = max(worst_leaf, dev / max(1.0, abs(y).max()))
        elapsed = time.perf_counter() - t0
        info["detail"] = f"200/200 root splits match; worst leaf-mean deviation {worst_leaf:.1e}; {elapsed:.2f} s"
        assert worst_leaf <= 1e-12
        assert elapsed < 10.0


# -------------------------------------------------------------- 4. AdaBoost


def _stump(X, y):
    best = None
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            m = X[:, j] <= thr
            sse = _sse(y[m]) + _sse(y[~m])
            if best is None or sse < best[0] - 1e-12:
                best = (sse, j, thr, y[m].mean(), y[~m].mean())
    if best is None:
        return lambda Z: np.full(len(Z), y.mean())
    _, j, thr, lo, hi = best
    return lambda Z: np.where(Z[:, j] <= thr, lo, hi)


def test_criterion_04_adaboost_trace(criterion):
    with criterion(4, "AdaBoost.R2 hand trace") as info:
        t0 = time.perf_counter()
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 3.0, 2.0, 8.0])
        seed = 5
        model = AdaBoostR2Regressor(2, 1.0, "tree", TreeParams(max_depth=1), seed=seed).fit(X, y)
        w = np.ones(4)
        preds, betas = [], []
        for u in range(2):
            p = w / w.sum()
            assert np.max(np.abs(model.sample_weights_[u] - p)) <= 1e-10
            rows = np.random.default_rng(derive_seed(seed, u)).choice(4, size=4, replace=True, p=p)
            pred = _stump(X[rows], y[rows])(X)
            err = np.abs(pred - y)
            Lr = err / err.max()
            avg = float((Lr * p).sum())
            beta = avg / (1 - avg)
            assert abs(model.betas_[u] - beta) <= 1e-10
            preds.append(pred)
            betas.append(beta)
            w = w * beta ** (1 - Lr)
        # weighted median by hand: sort the two predictions per row, take the first
        # whose cumulative weight reaches half the total
        mw = np.log(1 / np.array(betas))
        want = []
        for i in range(4):
            order = np.argsort([preds[0][i], preds[1][i]], kind="stable")
            cum = np.cumsum(mw[order])
            want.append([preds[0][i], preds[1][i]][order[np.argmax(cum >= 0.5 * cum[-1])]])
        got = model.predict(X)
        assert np.max(np.abs(got - np.array(want))) <= 1e-10
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = 2 * int(rng.integers(0, 5)) + 1
            v = rng.normal(size=(1, k))
            assert weighted_median(v, np.ones(k))[0] == np.median(v)
        elapsed = time.perf_counter() - t0
        info["detail"] = (f"betas {betas[0]:.6f}, {betas[1]:.6f}; weights and median match; "
                          f"{elapsed:.3f} s")
        assert elapsed < 1.0


# ------------------------------------------------------------------- 5. GBM


def test_criterion_05_gbm_trace(criterion):
    with criterion(5, "GBM trace and monotone training MSE") as info:
        t0 = time.perf_counter()
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 2.0, 4.0, 8.0])
        lr = 0.5
        f1 = _stump(X, y)(X)
        r1 = y - f1
        f2 = f1 + lr * _stump(X, r1)(X)
        model = gbm_fit(X, y, TreeParams(max_depth=1), T=2, learning_rate=lr)
        dev = float(np.max(np.abs(model.predict(X) - f2)))
        assert dev <= 1e-10
        rng = np.random.default_rng(7)
        Xs = rng.uniform(-1, 1, size=(300, 4))
        ys = np.sin(3 * Xs[:, 0]) + Xs[:, 1] ** 2 + 0.2 * rng.normal(size=300)
        mse = gbm_fit(Xs, ys, TreeParams(max_depth=3), T=50, learning_rate=0.3).train_mse_
        assert len(mse) == 50
        assert all(b <= a for a, b in zip(mse, mse[1:]))
        elapsed = time.perf_counter() - t0
        info["detail"] = (f"trace deviation {dev:.1e}; MSE {mse[0]:.4f} -> {mse[-1]:.4f} over 50 "
                          f"stages; {elapsed:.2f} s")
        assert elapsed < 5.0


# ------------------------------------------------------ 6. extrapolation trend


def test_criterion_06_extrapolation_trend(criterion):
    with criterion(6, "extrapolation trend, ADB-RF config 2, n=5000, 5 repeats") as info:
        t0 = time.perf_counter()
        train, vals = _variants(5000, 2024)
        clusters = fit_clusters(train, vals, seed=0)
        summaries = {}
        for algo in ("adb-rf", "adb-dt", "gbm"):
            rep = run_config(train, vals, PipelineConfig(2, algo, n_repeats=5, seed=0), clusters)
            summaries[algo] = {f.cluster: f.summary() for f in rep.fragments}
        elapsed = time.perf_counter() - t0
        parts = [f"k={clusters.k}"]
        problems = []
        for c in range(clusters.k):
            s = summaries["adb-rf"][c]
            assert not s["failures"], s["failures"]
            sc = s["scores"]
            test = sc["test"]["mean"]
            means = [sc[f"val{m}"]["mean"] for m in VARIANTS]
            stds = [sc[f"val{m}"]["std"] for m in VARIANTS]
            gaps = [means[0] - means[1], means[1] - means[2]]
            pooled = [np.sqrt((stds[0] ** 2 + stds[1] ** 2) / 2),
                      np.sqrt((stds[1] ** 2 + stds[2] ** 2) / 2)]
            gbm = summaries["gbm"][c]["scores"]["test"]["mean"]
            adb_dt = summaries["adb-dt"][c]["scores"]["test"]["mean"]
            parts.append(f"c{c}: test {test:.4f}, val {means[0]:.4f}/{means[1]:.4f}/{means[2]:.4f}"
                         f" gaps {gaps[0]:+.4f}/{gaps[1]:+.4f} (pooled std {pooled[0]:.4f}/"
                         f"{pooled[1]:.4f}); test gbm {gbm:.4f} adb-dt {adb_dt:.4f}")
            if test < 0.95:
                problems.append(f"cluster {c} test R2 {test:.4f} < 0.95")
            for g, sd in zip(gaps, pooled):
                if g < -sd:
                    problems.append(f"cluster {c} gap {g:+.4f} below -{sd:.4f}")
            if not (gbm < test and gbm < adb_dt):
                problems.append(f"cluster {c}: GBM does not rank below ADB-DT/ADB-RF on test")
        parts.append(f"{elapsed:.0f} s")
        info["detail"] = "; ".join(parts)
        assert not problems, problems
        assert elapsed < 600.0


# ------------------------------------------------------ 7. output-PCA benefit


def test_criterion_07_output_pca_benefit(criterion):
    with criterion(7, "output-PCA non-degradation, ADB-RF, 5 seeds (n=800)") as info:
        per_seed = []
        for seed in range(5):
            train, vals = _variants(800, seed)
            clusters = fit_clusters(train, vals, seed=seed)
            row = []
            for cid in (1, 2):
                rep = run_config(train, vals, PipelineConfig(cid, "adb-rf", n_repeats=1, seed=seed),
                                 clusters)
                vals_r2 = [f.summary()["scores"][f"val{m}"]["mean"] for f in rep.fragments
                           for m in VARIANTS]
                assert all(v is not None for v in vals_r2), "a fragment failed"
                row.append(float(np.mean(vals_r2)))
            per_seed.append(row)
        per_seed = np.array(per_seed)
        raw, pca = per_seed.mean(axis=0)
        info["detail"] = (f"config 1 {raw:.4f}, config 2 {pca:.4f} (diff {pca - raw:+.4f}); "
                          "per seed " + ", ".join(f"{a:.4f}/{b:.4f}" for a, b in per_seed))
        assert pca >= raw - 0.005


# ------------------------------------------------------------- 8. clustering


def test_criterion_08_clustering(criterion, monkeypatch):
    with criterion(8, "elbow picks k=2 in >= 4 of 5 seeds, Lloyd monotone") as info:
        histories = []
        original = clustering.kmeans_fit

        def recording(*args, **kw):
            model = original(*args, **kw)
            histories.append(model.history)
            return model

        monkeypatch.setattr(clustering, "kmeans_fit", recording)
        chosen = []
        for seed in range(5):
            ds = generate_dataset(GEOM, 238, 5000, derive_seed(seed, 238))
            M, _ = build_cluster_matrix(ds, PiecewisePolyModel(ds.stations))
            k, _, _ = elbow_select(M, range(1, 9), seed=seed)
            chosen.append(k)
        bad = [h for h in histories if any(b > a * (1 + 1e-12) for a, b in zip(h, h[1:]))]
        info["detail"] = f"chosen k per seed {chosen}; {len(histories)} runs, {len(bad)} non-monotone"
        assert chosen.count(2) >= 4
        assert len(histories) == 5 * 8 * 5 and not bad


# ---------------------------------------------------------------- 9. metrics


def test_criterion_09_metric_definitions(criterion):
    with criterion(9, "metric definitions") as info:
        rng = np.random.default_rng(9)
        Y = rng.normal(size=(50, 29)) * np.linspace(10, 1, 29)
        r2, _, _ = r2_per_station(Y, np.tile(Y.mean(axis=0), (50, 1)))
        assert np.max(np.abs(r2)) <= 1e-12
        y = np.abs(rng.normal(size=29)) + 0.5
        e = error_rate(y, 1.1 * y)
        assert abs(e - 0.1) <= 1e-15
        errs = rng.exponential(0.05, size=500)
        ecdf = error_ecdf(errs, np.linspace(0, errs.max(), 200))
        assert np.all(np.diff(ecdf.G) >= 0) and ecdf.G[-1] == 1.0
        info["detail"] = f"max |R2| of mean predictor {np.max(np.abs(r2)):.1e}; error {e!r}; G(max)=1"


# ------------------------------------------------------------ 10. reproducible


RUN_TOML = """
[dataset]
n = 300
seed = 7

[experiment]
configs = [2, 6]
algos = ["adb-rf", "adb-dt", "gbm"]
repeats = 2
seed = 3
"""


def test_criterion_10_reproducibility(criterion, tmp_path, monkeypatch):
    from wingloads.cli import main

    with criterion(10, "generate + run byte-identical across executions") as info:
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("WINGLOADS_DATA_DIR", raising=False)
        (tmp_path / "wb.toml").write_text(RUN_TOML)
        for tag in ("first", "second"):
            data = tmp_path / tag / "data"
            monkeypatch.setenv("WINGLOADS_DATA_DIR", str(data))
            assert main(["generate", "--config", "wb.toml"]) == 0
            assert main(["cluster", "--config", "wb.toml"]) == 0
            assert main(["run", "--config", "wb.toml", "--out", str(tmp_path / tag / "reports")]) == 0
        files = sorted(p.relative_to(tmp_path / "first")
                       for p in (tmp_path / "first").rglob("*") if p.is_file())
        differ = [str(f) for f in files
                  if (tmp_path / "first" / f).read_bytes() != (tmp_path / "second" / f).read_bytes()]
        info["detail"] = f"{len(files)} files compared, {len(differ)} differ"
        assert any(f.suffix == ".csv" for f in files) and any(f.suffix == ".json" for f in files)
        assert not differ, differ
