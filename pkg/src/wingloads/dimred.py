"""Invertible dimension reduction for inputs and bending-moment outputs.

Two building blocks, principal components on the correlation matrix and a
two-segment piecewise polynomial fitted per curve, are composed into
output codecs (raw, PCA, polynomial, polynomial then PCA) and input codecs
(raw, PCA). Every codec maps ``encode`` then ``decode`` back to the raw
space so scores are always computed on the original 29 stations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# ---------------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PcaModel:
    """Principal components of centered, unit-scaled data.

    ``components`` holds the retained ``r`` loading vectors as rows and
    ``eigenvalues`` the matching variances of the scaled data. ``all_eigenvalues``
    keeps the full spectrum for explained-variance bookkeeping.
    """

    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    all_eigenvalues: np.ndarray

    @property
    def retained_r(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    @property
    def explained_variance_ratio(self) -> float:
        return float(self.eigenvalues.sum() / self.all_eigenvalues.sum())

    def cumulative_explained(self) -> np.ndarray:
        ev = self.all_eigenvalues
        return np.cumsum(ev) / ev.sum()

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "components": self.components.tolist(), "eigenvalues": self.eigenvalues.tolist(),
                "all_eigenvalues": self.all_eigenvalues.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        comps = np.asarray(d["components"], dtype=float).reshape(-1, len(d["mean"]))
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float), comps,
                   np.asarray(d["eigenvalues"], float), np.asarray(d["all_eigenvalues"], float))


def pca_fit(data, variance_threshold: float = 0.9999, n_components: int | None = None,
            standardize: bool = True) -> PcaModel:
    """Fit PCA on the correlation matrix of ``data``.

    Retains the smallest ``r`` whose cumulative explained variance reaches
    ``variance_threshold`` unless ``n_components`` fixes it. Columns with
    zero spread keep scale 1. Each component is signed so its largest-magnitude
    entry is positive.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D matrix")
    n, p = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if p < 1:
        raise ValueError("PCA needs at least 1 column")
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError("variance_threshold must lie in (0, 1]")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in PCA input")
    mean = X.mean(axis=0)
    Z = X - mean
    std = Z.std(axis=0, ddof=1)
    if np.all(std == 0):
        raise ValueError("all columns are constant; nothing to decompose")
    scale = np.where(std > 0, std, 1.0) if standardize else np.ones(p)
    Z = Z / scale
    cov = Z.T @ Z / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    flip = vecs[np.arange(p), np.argmax(np.abs(vecs), axis=1)] < 0
    vecs[flip] *= -1.0
    if n_components is None:
        cum = np.cumsum(vals) / vals.sum()
        r = int(np.searchsorted(cum, variance_threshold * (1 - 1e-12)) + 1)
        r = min(r, p)
    else:
        if not 1 <= n_components <= p:
            raise ValueError(f"n_components must lie in [1, {p}]")
        r = int(n_components)
    return PcaModel(mean, scale, vecs[:r].copy(), vals[:r].copy(), vals)


def pca_project(model: PcaModel, rows) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} columns, got {rows.shape[1]}")
    return ((rows - model.mean) / model.scale) @ model.components.T


def pca_reconstruct(model: PcaModel, scores) -> np.ndarray:
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[1] != model.retained_r:
        raise ValueError(f"expected {model.retained_r} scores, got {scores.shape[1]}")
    return (scores @ model.components) * model.scale + model.mean


# ----------------------------------------------------------- piecewise poly


@dataclass(frozen=True)
class PiecewisePolyModel:
    """Two polynomials over the station index ranges ``[0, split)`` and ``[split, n)``.

    Abscissae are mapped to ``[0, 1]`` within each segment; coefficients are
    stored inboard first, highest power first.
    """

    stations: np.ndarray
    split_station_index: int = 12
    degree_inboard: int = 2
    degree_outboard: int = 2

    def __post_init__(self):
        st = np.asarray(self.stations, dtype=float)
        object.__setattr__(self, "stations", st)
        n = st.shape[0]
        if not 1 <= self.split_station_index <= n - 2:
            raise ValueError(f"split_station_index must lie in [1, {n - 2}]")
        if self.degree_inboard < 1 or self.degree_outboard < 1:
            raise ValueError("degrees must be >= 1")
        if self.split_station_index < self.degree_inboard + 1:
            raise ValueError("too few inboard stations for the inboard degree")
        if n - self.split_station_index < self.degree_outboard + 1:
            raise ValueError("too few outboard stations for the outboard degree")

    @property
    def n_coefficients(self) -> int:
        return self.degree_inboard + self.degree_outboard + 2

    def _segments(self):
        s = self.split_station_index
        return ((slice(0, s), self.degree_inboard), (slice(s, None), self.degree_outboard))

    def _vander(self, sl, degree, stations=None):
        x = self.stations[sl]
        lo, hi = x[0], x[-1]
        if not hi > lo:
            raise ValueError("segment has coincident stations")
        xs = self.stations[sl] if stations is None else stations
        return np.vander((xs - lo) / (hi - lo), degree + 1)

    def fit(self, curves) -> np.ndarray:
        """Least-squares coefficients per curve (rows), ``m x n_coefficients``."""
        Y = np.atleast_2d(np.asarray(curves, dtype=float))
        if Y.shape[1] != self.stations.shape[0]:
            raise ValueError(f"expected {self.stations.shape[0]} stations, got {Y.shape[1]}")
        out = []
        for sl, deg in self._segments():
            V = self._vander(sl, deg)
            G = V.T @ V
            if np.linalg.matrix_rank(G) < deg + 1:
                raise ValueError("rank-deficient segment (duplicate stations)")
            out.append(np.linalg.solve(G, V.T @ Y[:, sl].T).T)
        return np.hstack(out)

    def evaluate(self, coefficients) -> np.ndarray:
        C = np.atleast_2d(np.asarray(coefficients, dtype=float))
        if C.shape[1] != self.n_coefficients:
            raise ValueError(f"expected {self.n_coefficients} coefficients, got {C.shape[1]}")
        (s0, d0), (s1, d1) = self._segments()
        return np.hstack([C[:, : d0 + 1] @ self._vander(s0, d0).T,
                          C[:, d0 + 1:] @ self._vander(s1, d1).T])

    def to_dict(self) -> dict:
        return {"stations": self.stations.tolist(), "split_station_index": self.split_station_index,
                "degree_inboard": self.degree_inboard, "degree_outboard": self.degree_outboard}

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewisePolyModel":
        return cls(np.asarray(d["stations"], float), int(d["split_station_index"]),
                   int(d["degree_inboard"]), int(d["degree_outboard"]))


def piecewise_poly_fit(curve, model: PiecewisePolyModel) -> np.ndarray:
    """Coefficients of one curve (1-D) or of each row of a matrix."""
    out = model.fit(curve)
    return out[0] if np.ndim(curve) == 1 else out


def piecewise_poly_eval(coefficients, model: PiecewisePolyModel) -> np.ndarray:
    out = model.evaluate(coefficients)
    return out[0] if np.ndim(coefficients) == 1 else out


def row_r2(Y_true, Y_pred) -> np.ndarray:
    """R² of each row's reconstruction against that row's own mean."""
    Y_true = np.atleast_2d(Y_true)
    sse = np.sum((Y_true - Y_pred) ** 2, axis=1)
    sst = np.sum((Y_true - Y_true.mean(axis=1, keepdims=True)) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sst > 0, 1.0 - sse / sst, np.where(sse == 0, 1.0, -np.inf))


# ------------------------------------------------------------------- codecs

OUTPUT_KINDS = ("raw", "pca", "poly", "poly_pca")
INPUT_KINDS = ("raw", "pca")


@dataclass
class OutputCodec:
    """Reversible map between 29-station curves and the space models learn in.

    ``pca_threshold`` selects how many output components ``pca`` keeps and
    ``poly_pca_components`` fixes the count after polynomial fitting.
    """

    kind: str = "raw"
    pca_threshold: float = 0.9999
    poly_pca_components: int = 4
    split_station_index: int = 12
    degrees: tuple = (2, 2)
    pca: PcaModel | None = None
    poly: PiecewisePolyModel | None = None
    fitted: bool = False
    train_row_r2: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output codec {self.kind!r}; use one of {OUTPUT_KINDS}")

    def fit(self, outputs, stations) -> "OutputCodec":
        Y = np.asarray(outputs, dtype=float)
        if self.kind in ("poly", "poly_pca"):
            self.poly = PiecewisePolyModel(np.asarray(stations, float), self.split_station_index,
                                           *self.degrees)
        if self.kind == "pca":
            self.pca = pca_fit(Y, self.pca_threshold)
        elif self.kind == "poly_pca":
            self.pca = pca_fit(self.poly.fit(Y), n_components=self.poly_pca_components)
        self.fitted = True
        self.n_outputs_ = Y.shape[1]
        self.train_row_r2 = row_r2(Y, self.decode(self.encode(Y)))
        return self

    @property
    def width(self) -> int:
        self._need_fit()
        if self.kind == "raw":
            return self.n_outputs_
        if self.kind == "poly":
            return self.poly.n_coefficients
        return self.pca.retained_r

    def _need_fit(self):
        if not self.fitted:
            raise RuntimeError("codec is not fitted")

    def encode(self, outputs) -> np.ndarray:
        self._need_fit()
        Y = np.atleast_2d(np.asarray(outputs, dtype=float))
        if Y.shape[1] != self.n_outputs_:
            raise ValueError(f"expected {self.n_outputs_} output columns, got {Y.shape[1]}")
        if self.kind == "raw":
            return Y.copy()
        if self.kind == "pca":
            return pca_project(self.pca, Y)
        C = self.poly.fit(Y)
        return C if self.kind == "poly" else pca_project(self.pca, C)

    def decode(self, reduced) -> np.ndarray:
        self._need_fit()
        R = np.atleast_2d(np.asarray(reduced, dtype=float))
        if R.shape[1] != self.width:
            raise ValueError(f"expected {self.width} reduced columns, got {R.shape[1]}")
        if self.kind == "raw":
            return R.copy()
        if self.kind == "pca":
            return pca_reconstruct(self.pca, R)
        C = R if self.kind == "poly" else pca_reconstruct(self.pca, R)
        return self.poly.evaluate(C)

    def to_dict(self) -> dict:
        self._need_fit()
        return {"kind": self.kind, "pca_threshold": self.pca_threshold,
                "poly_pca_components": self.poly_pca_components,
                "split_station_index": self.split_station_index, "degrees": list(self.degrees),
                "n_outputs": self.n_outputs_,
                "pca": None if self.pca is None else self.pca.to_dict(),
                "poly": None if self.poly is None else self.poly.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "OutputCodec":
        c = cls(d["kind"], d["pca_threshold"], d["poly_pca_components"],
                d["split_station_index"], tuple(d["degrees"]))
        c.pca = None if d["pca"] is None else PcaModel.from_dict(d["pca"])
        c.poly = None if d["poly"] is None else PiecewisePolyModel.from_dict(d["poly"])
        c.n_outputs_ = d["n_outputs"]
        c.fitted = True
        return c


@dataclass
class InputCodec:
    """Identity or PCA map of the 25 features."""

    kind: str = "raw"
    pca_threshold: float = 0.99
    pca: PcaModel | None = None
    fitted: bool = False

    def __post_init__(self):
        if self.kind not in INPUT_KINDS:
            raise ValueError(f"unknown input codec {self.kind!r}; use one of {INPUT_KINDS}")

    def fit(self, features) -> "InputCodec":
        X = np.asarray(features, dtype=float)
        if self.kind == "pca":
            self.pca = pca_fit(X, self.pca_threshold)
        self.n_features_ = X.shape[1]
        self.fitted = True
        return self

    @property
    def width(self) -> int:
        return self.n_features_ if self.kind == "raw" else self.pca.retained_r

    def encode(self, features) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("codec is not fitted")
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[1] != self.n_features_:
            raise ValueError(f"expected {self.n_features_} features, got {X.shape[1]}")
        return X.copy() if self.kind == "raw" else pca_project(self.pca, X)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pca_threshold": self.pca_threshold,
                "n_features": self.n_features_,
                "pca": None if self.pca is None else self.pca.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "InputCodec":
        c = cls(d["kind"], d["pca_threshold"])
        c.pca = None if d["pca"] is None else PcaModel.from_dict(d["pca"])
        c.n_features_ = d["n_features"]
        c.fitted = True
        return c


def codec_encode(codec: OutputCodec, outputs) -> np.ndarray:
    return codec.encode(outputs)


def codec_decode(codec: OutputCodec, reduced) -> np.ndarray:
    return codec.decode(reduced)


def codec_to_json(codec) -> str:
    return json.dumps(codec.to_dict(), indent=1)


def codec_from_json(text: str):
    d = json.loads(text)
    return (OutputCodec if d["kind"] in ("poly", "poly_pca") or "degrees" in d else InputCodec).from_dict(d)
