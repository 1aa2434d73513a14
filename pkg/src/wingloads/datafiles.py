"""Dataset CSV files with a JSON sidecar.

The CSV holds one load case per line under the header ``f01..f25,y01..y29``
(optionally followed by ``cluster``). Numbers use the shortest decimal that
round-trips, so identical datasets give byte-identical files. The sidecar
``<name>.json`` stores stations, weight variant, seed, noise and geometry.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .wing import FEATURES, Dataset, WingGeometry


def output_codes(n: int) -> list:
    return [f"y{k:02d}" for k in range(1, n + 1)]


def feature_codes() -> list:
    return [f.code for f in FEATURES]


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_dataset(dataset: Dataset, path, labels=None) -> Path:
    """Write ``dataset`` (and an optional integer ``cluster`` column) to ``path``."""
    path = Path(path)
    header = feature_codes() + output_codes(dataset.outputs.shape[1])
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (len(dataset),):
            raise ValueError("one cluster label per row is required")
        header.append("cluster")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [repr(float(v)) for v in dataset.outputs[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            w.writerow(row)
    kinds = sorted(set(np.asarray(dataset.case_kind).tolist()))
    geometry = dataset.geometry.to_dict() if dataset.geometry is not None else None
    meta = {"stations": [float(s) for s in dataset.stations], "mtow_tons": dataset.mtow_tons,
            "case_kind": kinds[0] if len(kinds) == 1 else kinds, "seed": dataset.seed,
            "noise_rel": dataset.noise_rel, "n_rows": len(dataset), "geometry": geometry}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def read_dataset(path):
    """Read a dataset written by :func:`write_dataset`.

    Returns ``(dataset, labels)``; ``labels`` is None without a cluster column.
    """
    path = Path(path)
    meta_file = sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} not found")
    if not meta_file.exists():
        raise FileNotFoundError(f"metadata sidecar {meta_file} not found")
    meta = json.loads(meta_file.read_text())
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n_out = len(meta["stations"])
    expected = feature_codes() + output_codes(n_out)
    has_labels = header[-1:] == ["cluster"]
    if header[: len(expected)] != expected or len(header) != len(expected) + has_labels:
        raise ValueError(f"{path}: unexpected header")
    try:
        data = np.array([[float(v) for v in r[: len(expected)]] for r in rows], dtype=float)
        labels = np.array([int(r[-1]) for r in rows]) if has_labels else None
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    data = data.reshape(len(rows), len(expected))
    nf = len(FEATURES)
    ds = Dataset(features=data[:, :nf], outputs=data[:, nf:],
                 stations=np.asarray(meta["stations"], dtype=float), mtow_tons=meta["mtow_tons"],
                 case_kind=np.full(len(rows), meta.get("case_kind", "gust")),
                 seed=meta.get("seed"), noise_rel=meta.get("noise_rel"),
                 geometry=None if meta.get("geometry") is None
                 else WingGeometry.from_dict(meta["geometry"]))
    return ds, labels
