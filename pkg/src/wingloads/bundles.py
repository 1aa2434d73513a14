"""Fitted models saved as a directory of JSON files.

``manifest.json`` describes the model tree (estimator kinds, their
hyperparameters and seeds, optional codecs and metadata) and refers to
its regression trees by file name; each tree lives in ``trees/NNNNNN.json``
as the index-linked node array of :meth:`RegressionTree.to_dict`. Floats
are written with ``repr`` precision, so reloaded models predict bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dimred import InputCodec, OutputCodec
from .ensembles import (AdaBoostR2Regressor, BaggingRegressor, GradientBoostingRegressor,
                        MultiOutputRegressor, RandomForestRegressor, _PackedForest,
                        _TreeMachine)
from .evaluation import _SingleTree
from .trees import RegressionTree, TreeParams

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class _Writer:
    def __init__(self, root: Path):
        self.root = root
        self.count = 0
        (root / "trees").mkdir(parents=True, exist_ok=True)

    def tree(self, tree: RegressionTree) -> str:
        name = f"trees/{self.count:06d}.json"
        self.count += 1
        (self.root / name).write_text(json.dumps(tree.to_dict(), separators=(",", ":")))
        return name


def _params(p: TreeParams) -> dict:
    return asdict(p)


def _encode(model, w: _Writer) -> dict:
    if isinstance(model, RegressionTree):
        return {"kind": "tree", "file": w.tree(model)}
    if isinstance(model, _SingleTree):
        return {"kind": "single_tree", "params": _params(model.params),
                "tree": w.tree(model.tree_)}
    if isinstance(model, _TreeMachine):
        return {"kind": "tree_machine", "params": _params(model.params),
                "prune_folds": model.prune_folds, "seed": model.seed,
                "tree": w.tree(model.tree_)}
    if isinstance(model, BaggingRegressor):  # includes random forests
        d = {"kind": "forest" if isinstance(model, RandomForestRegressor) else "bagging",
             "n_estimators": model.n_estimators, "params": _params(model.tree_params),
             "bootstrap": model.bootstrap, "seed": model.seed,
             "bootstrap_seeds": [int(s) for s in model.bootstrap_seeds_],
             "n_features": model.n_features_, "single_output": model.single_output_,
             "trees": [w.tree(t) for t in model.trees_]}
        if isinstance(model, RandomForestRegressor):
            d["max_features"] = model.max_features
        else:
            d["prune_folds"] = model.prune_folds
        return d
    if isinstance(model, GradientBoostingRegressor):
        return {"kind": "gbm", "n_estimators": model.n_estimators,
                "learning_rate": model.learning_rate, "params": _params(model.tree_params),
                "seed": model.seed, "n_features": model.n_features_,
                "train_mse": model.train_mse_, "initial": w.tree(model.initial_),
                "stages": [w.tree(t) for t in model.stages_]}
    if isinstance(model, AdaBoostR2Regressor):
        return {"kind": "adaboost_r2", "n_estimators": model.n_estimators,
                "learning_rate": model.learning_rate, "base": model.base,
                "params": _params(model.tree_params),
                "forest_estimators": model.forest_estimators,
                "max_features": model.max_features, "prune_folds": model.prune_folds,
                "loss": model.loss, "seed": model.seed, "n_features": model.n_features_,
                "betas": [float(b) for b in model.betas_],
                "avg_losses": [float(a) for a in model.avg_losses_],
                "machines": [_encode(m, w) for m in model.machines_]}
    if isinstance(model, MultiOutputRegressor):
        return {"kind": "multi_output", "seed": model.seed,
                "estimators": [_encode(e, w) for e in model.estimators_]}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _decode(d: dict, root: Path):
    tree = lambda name: RegressionTree.from_dict(json.loads((root / name).read_text()))
    kind = d["kind"]
    if kind == "tree":
        return tree(d["file"])
    if kind == "single_tree":
        m = _SingleTree(TreeParams(**d["params"]))
        m.tree_ = tree(d["tree"])
        return m
    if kind == "tree_machine":
        m = _TreeMachine(TreeParams(**d["params"]), d["prune_folds"], d["seed"])
        m.tree_ = tree(d["tree"])
        return m
    if kind in ("bagging", "forest"):
        if kind == "forest":
            m = RandomForestRegressor(d["n_estimators"], TreeParams(**d["params"]),
                                      d["max_features"], d["bootstrap"], d["seed"])
        else:
            m = BaggingRegressor(d["n_estimators"], TreeParams(**d["params"]), d["bootstrap"],
                                 d["prune_folds"], d["seed"])
        m.trees_ = [tree(name) for name in d["trees"]]
        m.bootstrap_seeds_ = list(d["bootstrap_seeds"])
        m.n_features_ = d["n_features"]
        m.single_output_ = d["single_output"]
        m._packed = _PackedForest(m.trees_)
        return m
    if kind == "gbm":
        m = GradientBoostingRegressor(d["n_estimators"], d["learning_rate"],
                                      TreeParams(**d["params"]), d["seed"])
        m.initial_ = tree(d["initial"])
        m.stages_ = [tree(name) for name in d["stages"]]
        m.train_mse_ = list(d["train_mse"])
        m.n_features_ = d["n_features"]
        m._packed = _PackedForest(m.stages_) if m.stages_ else None
        return m
    if kind == "adaboost_r2":
        m = AdaBoostR2Regressor(d["n_estimators"], d["learning_rate"], d["base"],
                                TreeParams(**d["params"]), d["forest_estimators"],
                                d["max_features"], d["prune_folds"], d["loss"], d["seed"])
        m.machines_ = [_decode(x, root) for x in d["machines"]]
        m.betas_ = list(d["betas"])
        m.avg_losses_ = list(d["avg_losses"])
        m.n_features_ = d["n_features"]
        return m
    if kind == "multi_output":
        m = MultiOutputRegressor(None, d["seed"])
        m.estimators_ = [_decode(x, root) for x in d["estimators"]]
        return m
    raise ValueError(f"unknown model kind {kind!r} in bundle")


def save_bundle(model, directory, *, algo: str | None = None, hyperparameters=None,
                seed: int | None = None, input_codec: InputCodec | None = None,
                output_codec: OutputCodec | None = None, metadata=None) -> Path:
    """Write ``model`` (and optionally its codecs) to ``directory``.

    The directory is created; an existing bundle there is replaced.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    if (root / "trees").exists():
        for old in (root / "trees").glob("*.json"):
            old.unlink()
    w = _Writer(root)
    manifest = {"format_version": FORMAT_VERSION, "algo": algo,
                "hyperparameters": hyperparameters, "seed": seed,
                "input_codec": None if input_codec is None else input_codec.to_dict(),
                "output_codec": None if output_codec is None else output_codec.to_dict(),
                "metadata": metadata, "model": _encode(model, w), "n_tree_files": w.count}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True,
                                            default=_jsonable) + "\n")
    return root


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


class Bundle:
    """A reloaded model with its manifest fields and codecs."""

    def __init__(self, model, manifest: dict):
        self.model = model
        self.manifest = manifest
        self.algo = manifest.get("algo")
        self.seed = manifest.get("seed")
        self.hyperparameters = manifest.get("hyperparameters")
        ic, oc = manifest.get("input_codec"), manifest.get("output_codec")
        self.input_codec = None if ic is None else InputCodec.from_dict(ic)
        self.output_codec = None if oc is None else OutputCodec.from_dict(oc)

    def predict(self, X) -> np.ndarray:
        """Predict raw outputs, applying the stored codecs when present."""
        Z = X if self.input_codec is None else self.input_codec.encode(X)
        R = np.asarray(self.model.predict(Z))
        if self.output_codec is None:
            return R
        return self.output_codec.decode(R.reshape(len(Z), -1))


def load_bundle(directory) -> Bundle:
    root = Path(directory)
    path = root / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported bundle format {manifest.get('format_version')!r}")
    return Bundle(_decode(manifest["model"], root), manifest)
