"""Workbench configuration stored as a TOML document.

Grammar (every block and key optional; defaults shown by ``default_toml()``)::

    [geometry]        any WingGeometry field, e.g. span_L = 28.0
    [dataset]         n (rows per variant), seed, noise_rel, variants (list of tons)
    [dataset.n_per_variant]   "<tons>" = rows, overriding n; 0 skips the variant
    [experiment]      configs, algos, repeats, split_fraction, seed,
                      k (0 = elbow scan), k_max
    [paths]           data_dir, model_dir, report_dir (relative to the working dir)

Unknown blocks or keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .evaluation import ALGOS, CONFIG_CODECS
from .wing import MTOW_VARIANTS, WingGeometry


@dataclass
class DatasetBlock:
    n: int = 5000
    seed: int = 2024
    noise_rel: float = 0.005
    variants: list = field(default_factory=lambda: list(MTOW_VARIANTS))
    n_per_variant: dict = field(default_factory=dict)

    def rows_for(self, mtow: int) -> int:
        return int(self.n_per_variant.get(str(mtow), self.n))


@dataclass
class ExperimentBlock:
    configs: list = field(default_factory=lambda: [2])
    algos: list = field(default_factory=lambda: ["adb-rf", "adb-dt", "gbm"])
    repeats: int = 5
    split_fraction: float = 0.8
    seed: int = 0
    k: int = 0
    k_max: int = 8


@dataclass
class PathsBlock:
    data_dir: str = "data"
    model_dir: str = "models"
    report_dir: str = "reports"


@dataclass
class WorkbenchConfig:
    geometry: WingGeometry = field(default_factory=WingGeometry)
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    paths: PathsBlock = field(default_factory=PathsBlock)

    def validate(self) -> "WorkbenchConfig":
        d, e = self.dataset, self.experiment
        if d.n < 0 or any(int(v) < 0 for v in d.n_per_variant.values()):
            raise ValueError("row counts must be >= 0")
        bad = [v for v in d.variants if v not in MTOW_VARIANTS]
        if bad:
            raise ValueError(f"unknown weight variant(s) {bad}; known: {list(MTOW_VARIANTS)}")
        if not 0.0 <= d.noise_rel <= 0.05:
            raise ValueError("noise_rel must lie in [0, 0.05]")
        bad = [c for c in e.configs if c not in CONFIG_CODECS]
        if bad:
            raise ValueError(f"unknown configuration(s) {bad}; use 1..8")
        bad = [a for a in e.algos if a not in ALGOS]
        if bad:
            raise ValueError(f"unknown algorithm(s) {bad}; use {list(ALGOS)}")
        if e.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0.0 < e.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if e.k < 0 or e.k_max < 3:
            raise ValueError("k must be >= 0 and k_max >= 3")
        return self

    def to_dict(self) -> dict:
        return {"geometry": self.geometry.to_dict(), "dataset": dataclasses.asdict(self.dataset),
                "experiment": dataclasses.asdict(self.experiment),
                "paths": dataclasses.asdict(self.paths)}

    @classmethod
    def from_dict(cls, d: dict) -> "WorkbenchConfig":
        unknown = set(d) - {"geometry", "dataset", "experiment", "paths"}
        if unknown:
            raise ValueError(f"unknown config block(s): {sorted(unknown)}")
        geo = {**WingGeometry().to_dict(), **d.get("geometry", {})}
        unknown = set(geo) - set(WingGeometry().to_dict())
        if unknown:
            raise ValueError(f"unknown key(s) in [geometry]: {sorted(unknown)}")
        return cls(WingGeometry.from_dict(geo), _block(DatasetBlock, d.get("dataset", {})),
                   _block(ExperimentBlock, d.get("experiment", {})),
                   _block(PathsBlock, d.get("paths", {}))).validate()


def _block(kind, values: dict):
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown key(s) in [{kind.__name__}]: {sorted(unknown)}")
    return kind(**values)


def loads(text: str) -> WorkbenchConfig:
    return WorkbenchConfig.from_dict(tomli.loads(text))


def dumps(config: WorkbenchConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def load(path) -> WorkbenchConfig:
    return loads(Path(path).read_text())


def default_toml() -> str:
    return dumps(WorkbenchConfig())
