import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wingloads.evaluation import (ALGOS, CONFIG_CODECS, ClusterSetup, ExperimentReport,
                                  Fragment, LoadedReport, PipelineConfig, compare_reports,
                                  default_hyperparameters, ecdf_to_tsv, error_ecdf, error_rate,
                                  fit_clusters, format_comparison, make_model, r2_per_station,
                                  report_to_csv, report_to_json, run_config, split_indices)
from wingloads.wing import WingGeometry, generate_dataset

# ------------------------------------------------------------------ metrics


def test_r2_perfect_and_mean_predictor():
    Y = np.random.default_rng(0).normal(size=(20, 29))
    r2, mean, excl = r2_per_station(Y, Y)
    np.testing.assert_array_equal(r2, 1.0)
    assert mean == 1.0 and excl == 0
    r2, mean, _ = r2_per_station(Y, np.tile(Y.mean(axis=0), (20, 1)))
    np.testing.assert_allclose(r2, 0.0, atol=1e-12)


def test_r2_three_row_hand_example():
    r2, mean, _ = r2_per_station([[0.0], [2.0], [4.0]], [[1.0], [2.0], [3.0]])
    assert r2[0] == pytest.approx(0.75) and mean == pytest.approx(0.75)


def test_r2_zero_variance_station():
    Y = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
    P = Y.copy()
    P[:, 2] = 1.0
    with pytest.warns(RuntimeWarning, match="excluded"):
        r2, mean, excl = r2_per_station(Y, P)
    assert r2[1] == 1.0 and np.isnan(r2[2]) and excl == 1
    assert mean == 1.0


def test_r2_input_checks():
    with pytest.raises(ValueError):
        r2_per_station(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        r2_per_station(np.ones((1, 2)), np.ones((1, 2)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_r2_never_exceeds_one(Y, P):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r2, _, _ = r2_per_station(Y, P)
    assert np.all(r2[np.isfinite(r2)] <= 1.0 + 1e-12)


def test_error_rate_examples():
    y = np.linspace(1, 3, 29)
    assert error_rate(y, y) == 0.0
    assert error_rate(y, 1.1 * y) == pytest.approx(0.1, abs=1e-15)
    assert error_rate([3.0, 4.0], [3.0, 5.0]) == pytest.approx(0.2, abs=1e-15)
    np.testing.assert_allclose(error_rate(np.vstack([y, 2 * y]), np.vstack([y, 2.2 * y])),
                               [0.0, 0.1], atol=1e-15)


def test_error_rate_zero_curve_names_row():
    with pytest.raises(ValueError, match="row 1"):
        error_rate(np.array([[1.0, 1.0], [0.0, 0.0]]), np.ones((2, 2)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(0.1, 1e3)),
       arrays(np.float64, 8, elements=st.floats(-1e3, 1e3)),
       st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
def test_error_rate_scale_invariant(y, p, c):
    assert error_rate(c * y, c * p) == pytest.approx(error_rate(y, p), rel=1e-9, abs=1e-12)


def test_ecdf_examples():
    e = error_ecdf(np.zeros(5), [0.0, 0.1])
    np.testing.assert_array_equal(e.G, 1.0)
    e = error_ecdf([0.01, 0.05, 0.2], [0.02, 0.1, 0.2])
    np.testing.assert_allclose(e.G, [1 / 3, 2 / 3, 1.0])
    assert e.p_le_2pct == pytest.approx(1 / 3) and e.p_le_10pct == pytest.approx(2 / 3)
    assert e.mean_error == pytest.approx(0.26 / 3) and e.n == 3
    with pytest.raises(ValueError):
        error_ecdf([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=40))
def test_ecdf_properties(errors):
    alphas = np.sort(np.concatenate([np.linspace(0, 2, 21), errors]))
    e = error_ecdf(errors, alphas)
    assert np.all(np.diff(e.G) >= 0) and np.all((0 <= e.G) & (e.G <= 1))
    assert error_ecdf(errors, [max(errors)]).G[0] == 1.0


# ----------------------------------------------------------- configuration


def test_config_codec_table():
    assert CONFIG_CODECS[1] == ("raw", "raw")
    assert CONFIG_CODECS[2] == ("raw", "pca")
    assert CONFIG_CODECS[5] == ("pca", "raw")
    assert CONFIG_CODECS[6] == ("pca", "pca")
    assert sorted(CONFIG_CODECS) == list(range(1, 9))
    pc = PipelineConfig(6, "gbm")
    assert (pc.input_codec, pc.output_codec) == ("pca", "pca")


def test_tabulated_forest_defaults():
    hp = default_hyperparameters("rf", 1, 0)
    assert (hp["min_samples_leaf"], hp["min_samples_split"], hp["n_estimators"]) == (5, 10, 144)


@pytest.mark.parametrize("algo", ALGOS)
@pytest.mark.parametrize("config_id", range(1, 9))
def test_every_algorithm_has_defaults(algo, config_id):
    for c in (0, 1, 2):
        hp = default_hyperparameters(algo, config_id, c)
        make_model(algo, hp, seed=0, n_features=25, n_outputs=4)


def test_pipeline_config_validation():
    for kw in ({"config_id": 9}, {"config_id": 1, "algo": "svm"},
               {"config_id": 1, "split_fraction": 1.0}, {"config_id": 1, "n_repeats": 0}):
        with pytest.raises(ValueError):
            PipelineConfig(**kw)


def test_split_reproducible_and_disjoint():
    a = split_indices(100, 0.8, 3, 0)
    b = split_indices(100, 0.8, 3, 0)
    c = split_indices(100, 0.8, 3, 1)
    np.testing.assert_array_equal(a[0], b[0])
    assert len(a[0]) == 80 and not set(a[0]) & set(a[1])
    assert set(a[0]) | set(a[1]) == set(range(100))
    assert not np.array_equal(a[0], c[0])


# ----------------------------------------------------------------- running

FAST = {"dt": {}, "gbm": {"n_estimators": 5, "max_depth": 3},
        "adb-dt": {"n_estimators": 4}, "adb-rf": {"n_estimators": 2, "forest_estimators": 3},
        "rf": {"n_estimators": 5}, "bagging": {"n_estimators": 4}}


@pytest.fixture(scope="module")
def small_variants():
    g = WingGeometry()
    train = generate_dataset(g, 238, 400, seed=1)
    vals = {m: generate_dataset(g, m, 150, seed=m) for m in (242, 251)}
    return train, vals


@pytest.mark.parametrize("algo", ALGOS)
def test_run_config_schema(small_variants, algo):
    train, vals = small_variants
    rep = run_config(train, vals, PipelineConfig(2, algo, n_repeats=2, hyperparameters=FAST[algo]))
    (s,) = rep.to_dict()["fragments"]
    assert s["failures"] == [] and s["n_repeats_ok"] == 2
    assert set(s["scores"]) == {"learning", "test", "val242", "val251"}
    for stat in s["scores"].values():
        assert stat["mean"] <= 1.0 and stat["std"] >= 0.0
    assert set(s["ecdf"]) == {"val242", "val251"}
    assert s["ecdf"]["val242"]["n"] == 2 * 150
    assert s["sizes"]["learning"] + s["sizes"]["test"] == 400


@pytest.mark.parametrize("config_id", range(1, 9))
def test_every_configuration_runs(small_variants, config_id):
    train, vals = small_variants
    rep = run_config(train, vals, PipelineConfig(config_id, "dt", n_repeats=1))
    frag = rep.fragments[0]
    assert frag.ok and not frag.failures
    widths = {1: 29, 3: 6, 4: 4, 5: 29, 7: 6, 8: 4}
    if config_id in widths:
        assert frag.reduced_width == [widths[config_id]]
    else:
        assert frag.reduced_width[0] <= 6


def test_single_repeat_has_zero_std(small_variants):
    train, vals = small_variants
    (s,) = run_config(train, vals, PipelineConfig(1, "dt", n_repeats=1)).to_dict()["fragments"]
    assert all(v["std"] == 0.0 for v in s["scores"].values())


def test_run_is_deterministic(small_variants):
    train, vals = small_variants
    pc = PipelineConfig(4, "adb-dt", n_repeats=2, seed=5, hyperparameters=FAST["adb-dt"])
    assert report_to_json(run_config(train, vals, pc)) == report_to_json(run_config(train, vals, pc))


def test_failed_repeat_is_recorded(small_variants):
    train, vals = small_variants
    labels = np.zeros(len(train), np.int64)
    labels[:3] = 1  # a cluster too small to split
    clusters = ClusterSetup(2, labels, {v: np.zeros(len(d), np.int64) for v, d in vals.items()})
    rep = run_config(train, vals, PipelineConfig(1, "dt", n_repeats=2), clusters)
    good, bad = rep.get(1, "dt", 0), rep.get(1, "dt", 1)
    assert good.ok and not good.failures
    assert not bad.ok and len(bad.failures) == 2
    assert "too few rows" in bad.failures[0]["error"]
    assert bad.summary()["scores"]["test"] == {"mean": None, "std": None}


def test_fit_clusters_assigns_validation_rows(small_variants):
    train, vals = small_variants
    setup = fit_clusters(train, vals, k=2, seed=0)
    assert setup.k == 2 and set(np.unique(setup.train_labels)) == {0, 1}
    assert all(len(setup.validation_labels[v]) == len(d) for v, d in vals.items())


# --------------------------------------------------------------- reporting


def _fragment(config_id, algo, cluster, val, std, test=0.9):
    f = Fragment(config_id, algo, cluster)
    f.scores = {"test": [test], "val242": [val - std, val + std]}
    return f


def test_single_fragment_table():
    rows = compare_reports(ExperimentReport([_fragment(2, "dt", 0, 0.8, 0.0)]))
    assert len(rows) == 1 and rows[0]["best"] and rows[0]["rank"] == 1


def test_equal_means_ranked_by_lower_std():
    rep = ExperimentReport([_fragment(1, "gbm", 0, 0.8, 0.05), _fragment(1, "dt", 0, 0.8, 0.01)])
    rows = compare_reports(rep)
    assert [r["algo"] for r in rows] == ["dt", "gbm"]


def test_pca_versus_raw_flag():
    rep = ExperimentReport([_fragment(1, "dt", 0, 0.80, 0.0), _fragment(2, "dt", 0, 0.85, 0.0)])
    rows = {r["config_id"]: r for r in compare_reports(rep)}
    assert rows[2]["output_pca_beats_raw"] is True
    assert rows[1]["output_pca_beats_raw"] is None
    assert "pca>raw" in format_comparison(compare_reports(rep))


def test_report_order_is_independent_of_arrival():
    frags = [_fragment(2, "dt", 1, 0.7, 0.0), _fragment(1, "gbm", 0, 0.8, 0.0),
             _fragment(1, "dt", 0, 0.6, 0.0)]
    a = report_to_json(ExperimentReport(frags))
    b = report_to_json(ExperimentReport(frags[::-1]))
    assert a == b


def test_exports_round_trip(small_variants):
    train, vals = small_variants
    rep = run_config(train, vals, PipelineConfig(1, "dt", n_repeats=2))
    text = report_to_json(rep)
    loaded = LoadedReport.from_json(text)
    assert report_to_json(loaded) == text
    assert report_to_csv(loaded) == report_to_csv(rep)
    csv_lines = report_to_csv(rep).splitlines()
    assert csv_lines[0].startswith("config_id,cluster,algo,learning_mean,learning_std,test_mean")
    assert len(csv_lines) == 2
    tsv = ecdf_to_tsv(rep, "val242").splitlines()
    assert tsv[0] == "config_id\tcluster\talgo\talpha\tG"
    G = [float(line.split("\t")[4]) for line in tsv[1:]]
    assert G == sorted(G)
    with pytest.raises(ValueError):
        LoadedReport(json.loads('{"rows": []}'))
