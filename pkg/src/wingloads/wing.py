"""Simplified wing-box load model and synthetic load-case generator.

The wing is a tapered cantilever of span ``L`` clamped at the root. Three
spanwise load densities act on it: aerodynamic lift, fuel inertia over the
tank span and structural inertia. Shear and bending moment follow by
integrating from the free tip towards the root, and the cover thickness
needed to keep the cover stress under ``sigma_max`` gives the sized wing
mass.

Geometry defaults are plausibility choices for a wide-body aircraft, not
values taken from any manufacturer.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize, stats

G = 9.80665
N_STATIONS = 29
SPLIT_STATION = 12
MTOW_VARIANTS = (238, 242, 247, 251)
# mean multiplier for fuel tank 1 per weight variant
TANK1_MEAN_FACTOR = {238: 1.0, 242: 1.5, 247: 2.17, 251: 3.7}

_CHUNK_ROWS = 8192
_REFINE = 8


def cosine_stations(span: float, n: int = N_STATIONS) -> np.ndarray:
    """Spanwise stations from root (0) to tip (``span``), denser at the root."""
    return span * (1.0 - np.cos(0.5 * np.pi * np.arange(n) / (n - 1)))


@dataclass(frozen=True)
class WingGeometry:
    """Planform, tank and wing-box dimensions (SI units).

    The defaults are plausible values for a long-range twin, not data from
    any real aircraft.
    """

    span_L: float = 28.0
    chord_root_Co: float = 10.0
    chord_tip_Ct: float = 2.5
    # tank runs from its inboard edge to the tip; default edge sits on station 12
    tank_Lf: float = 28.0 * math.cos(0.5 * math.pi * SPLIT_STATION / (N_STATIONS - 1))
    tank_Cof: float = 2.4
    tank_Ctf: float = 1.6
    box_height_root: float = 1.2
    box_height_tip: float = 0.3
    sigma_max: float = 3.0e8
    rho: float = 2800.0
    cover_weight_fraction: float = 0.30

    def __post_init__(self):
        lengths = {
            "span_L": self.span_L,
            "chord_root_Co": self.chord_root_Co,
            "chord_tip_Ct": self.chord_tip_Ct,
            "tank_Lf": self.tank_Lf,
            "tank_Cof": self.tank_Cof,
            "tank_Ctf": self.tank_Ctf,
            "box_height_root": self.box_height_root,
            "box_height_tip": self.box_height_tip,
        }
        for name, value in lengths.items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive length, got {value!r}")
        if self.chord_tip_Ct > self.chord_root_Co:
            raise ValueError("tip chord must not exceed root chord")
        if self.box_height_tip > self.box_height_root:
            raise ValueError("box height must decrease from root to tip")
        if self.tank_Lf > self.span_L:
            raise ValueError("tank span exceeds wing span")
        if not 0.0 < self.cover_weight_fraction < 1.0:
            raise ValueError("cover_weight_fraction must lie in (0, 1)")
        if not (self.sigma_max > 0 and self.rho > 0):
            raise ValueError("sigma_max and rho must be positive")

    @property
    def tank_start(self) -> float:
        return self.span_L - self.tank_Lf

    def stations(self, n: int = N_STATIONS) -> np.ndarray:
        return cosine_stations(self.span_L, n)

    def chord(self, x) -> np.ndarray:
        xi = np.asarray(x, dtype=float) / self.span_L
        return self.chord_root_Co + (self.chord_tip_Ct - self.chord_root_Co) * xi

    def box_height(self, x) -> np.ndarray:
        xi = np.asarray(x, dtype=float) / self.span_L
        return self.box_height_root + (self.box_height_tip - self.box_height_root) * xi

    def tank_chord(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = (x - self.tank_start) / self.tank_Lf
        c = self.tank_Cof + (self.tank_Ctf - self.tank_Cof) * u
        return np.where((u >= 0.0) & (u <= 1.0), c, 0.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WingGeometry":
        return cls(**{k: float(v) for k, v in d.items()})


# ---------------------------------------------------------------- features


class FeatureSpec(NamedTuple):
    code: str
    name: str
    family: str  # gaussian | mix2 | bimodal | multimodal | quadrimodal
    mean: float
    std: float
    lo: float
    hi: float


FEATURES: tuple[FeatureSpec, ...] = (
    FeatureSpec("f01", "elevator_inboard_defl", "gaussian", 0.015, 0.034, -0.116, 0.108),
    FeatureSpec("f02", "stabilizer_setting", "mix2", -0.033, 0.023, -0.093, 0.0033),
    FeatureSpec("f03", "spoiler1_defl", "bimodal", -0.221, 0.218, -0.436, 0.0),
    FeatureSpec("f04", "spoiler2_defl", "mix2", -0.266, 0.262, -0.755, 0.230),
    FeatureSpec("f05", "spoiler3_defl", "mix2", -0.266, 0.262, -0.755, 0.230),
    FeatureSpec("f06", "spoiler4_defl", "mix2", -0.266, 0.262, -0.755, 0.230),
    FeatureSpec("f07", "spoiler5_defl", "mix2", -0.266, 0.262, -0.755, 0.230),
    FeatureSpec("f08", "spoiler6_defl", "mix2", -0.266, 0.262, -0.755, 0.230),
    FeatureSpec("f09", "aileron_inner_defl", "gaussian", -0.029, 0.086, -0.58, 0.58),
    FeatureSpec("f10", "aileron_outer_defl", "quadrimodal", -0.028, 0.053, -0.157, 0.0),
    FeatureSpec("f11", "rudder_lower_defl", "gaussian", 0.0, 0.011, -0.072, 0.072),
    FeatureSpec("f12", "total_mass", "multimodal", 195738.0, 35428.0, 135093.0, 238000.0),
    FeatureSpec("f13", "mach", "multimodal", 0.716, 0.19, 0.372, 0.93),
    FeatureSpec("f14", "true_airspeed", "multimodal", 223.0, 50.0, 126.0, 282.0),
    FeatureSpec("f15", "altitude", "multimodal", 6270.0, 4519.0, 0.0, 12634.0),
    FeatureSpec("f16", "cg_location", "multimodal", 0.297, 0.114, 0.140, 0.42),
    FeatureSpec("f17", "thrust", "multimodal", 131442.0, 157160.0, 0.0, 415495.0),
    FeatureSpec("f18", "load_factor_x", "gaussian", -0.020, 0.107, -0.3, 0.261),
    FeatureSpec("f19", "load_factor_y", "gaussian", 0.0, 0.08, -0.306, 0.307),
    FeatureSpec("f20", "load_factor_z", "gaussian", 1.024, 0.43, -0.701, 2.643),
    FeatureSpec("f21", "fuel_tank1_mass", "multimodal", 392.0, 1030.0, 0.0, 4341.0),
    FeatureSpec("f22", "fuel_tank2_mass", "multimodal", 13008.0, 12721.0, 0.0, 36295.0),
    FeatureSpec("f23", "fuel_tank3_mass", "multimodal", 1883.0, 1377.0, 0.0, 3087.0),
    FeatureSpec("f24", "fuel_tank4_mass", "multimodal", 945.0, 1029.0, 0.0, 2592.0),
    FeatureSpec("f25", "engine_inner_thrust", "multimodal", 65721.0, 78579.0, 0.0, 207747.0),
)
N_FEATURES = len(FEATURES)
FEATURE_INDEX = {f.name: i for i, f in enumerate(FEATURES)}
I_MASS = FEATURE_INDEX["total_mass"]
I_ALT = FEATURE_INDEX["altitude"]
I_NX = FEATURE_INDEX["load_factor_x"]
I_NZ = FEATURE_INDEX["load_factor_z"]
I_TANKS = [FEATURE_INDEX[f"fuel_tank{k}_mass"] for k in range(1, 5)]
# two-mode features whose active mode follows the gust regime
REGIME_COUPLED = [FEATURE_INDEX[n] for n in (
    "stabilizer_setting", "spoiler1_defl", "spoiler2_defl", "spoiler3_defl",
    "spoiler4_defl", "spoiler5_defl", "spoiler6_defl")]

# component layout in units of the mixture scale: (offsets, component std)
_SHAPES = {
    "gaussian": (np.array([0.0]), 1.0),
    "mix2": (np.array([-1.0, 1.0]), 0.35),
    "bimodal": (np.array([-1.0, 1.0]), 0.35),
    "multimodal": (np.array([-1.0, 0.0, 1.0]), 0.35),
    "quadrimodal": (np.array([-1.5, -0.5, 0.5, 1.5]), 0.25),
}


class MixtureParams(NamedTuple):
    locs: np.ndarray
    scale: float
    lo: float
    hi: float


def _truncated_moments(locs, sd, lo, hi):
    a = (lo - locs) / sd
    b = (hi - locs) / sd
    m, v = stats.truncnorm.stats(a, b, loc=locs, scale=sd, moments="mv")
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    mean = m.mean()
    return mean, math.sqrt(max((v + m**2).mean() - mean**2, 0.0))


def _moment_match(spec: FeatureSpec) -> MixtureParams:
    offsets, rel_sd = _SHAPES[spec.family]
    width = spec.hi - spec.lo
    spread = math.sqrt(rel_sd**2 + float(np.mean(offsets**2)))

    def residual(theta):
        loc, log_scale = theta
        scale = math.exp(log_scale)
        mean, std = _truncated_moments(loc + scale * offsets, scale * rel_sd, spec.lo, spec.hi)
        return [(mean - spec.mean) / spec.std, (std - spec.std) / spec.std]

    x0 = [spec.mean, math.log(spec.std / spread)]
    sol = optimize.least_squares(
        residual, x0,
        bounds=([spec.lo - width, math.log(1e-4 * width)], [spec.hi + width, math.log(5 * width)]),
        xtol=1e-12, ftol=1e-12)
    loc, scale = sol.x[0], math.exp(sol.x[1])
    return MixtureParams(loc + scale * offsets * 1.0, scale * rel_sd, spec.lo, spec.hi)


def variant_specs(mtow_tons: int) -> tuple[FeatureSpec, ...]:
    """Feature distribution table for one weight variant."""
    if mtow_tons not in MTOW_VARIANTS:
        raise ValueError(f"unknown weight variant {mtow_tons!r}; expected one of {MTOW_VARIANTS}")
    f = mtow_tons / 238.0
    specs = list(FEATURES)
    m = specs[I_MASS]
    specs[I_MASS] = m._replace(mean=m.mean * f, std=m.std * f, lo=m.lo * f, hi=m.hi * f)
    t1 = specs[I_TANKS[0]]
    specs[I_TANKS[0]] = t1._replace(mean=t1.mean * TANK1_MEAN_FACTOR[mtow_tons])
    return tuple(specs)


@functools.lru_cache(maxsize=None)
def mixture_table(mtow_tons: int) -> tuple[MixtureParams, ...]:
    """Moment-matched truncated-normal mixtures, one per feature.

    Each component is truncated to the feature bounds separately, so the
    mixture weights stay equal; the common location and scale are solved
    so the truncated mixture reproduces the tabulated mean and std as
    closely as the family allows.
    """
    return tuple(_moment_match(s) for s in variant_specs(mtow_tons))


def _draw(rng, mix: MixtureParams, comp: np.ndarray) -> np.ndarray:
    locs = mix.locs[comp]
    a = (mix.lo - locs) / mix.scale
    b = (mix.hi - locs) / mix.scale
    x = stats.truncnorm.rvs(a, b, loc=locs, scale=mix.scale, size=comp.shape, random_state=rng)
    return np.clip(x, mix.lo, mix.hi)


def gust_regime(features: np.ndarray) -> np.ndarray:
    """0 for the flatter family, 1 for the root-heavy family.

    The family is set by the sign pattern of the longitudinal load factor
    (about its median) and the vertical load factor.
    """
    features = np.atleast_2d(features)
    nx_split = FEATURES[I_NX].mean
    return ((features[:, I_NX] < nx_split) ^ (features[:, I_NZ] < 0.0)).astype(np.int64)


def _sample_chunk(mixes, n, rng):
    out = np.empty((n, N_FEATURES))
    coupled = set(REGIME_COUPLED)
    for j in range(N_FEATURES):
        if j in coupled:
            continue
        k = len(mixes[j].locs)
        comp = rng.integers(k, size=n) if k > 1 else np.zeros(n, dtype=np.int64)
        out[:, j] = _draw(rng, mixes[j], comp)
    regime = gust_regime(out)
    for j in REGIME_COUPLED:
        out[:, j] = _draw(rng, mixes[j], regime)
    return out


def sample_features(mtow_tons: int, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` load-case feature rows for a weight variant.

    Rows are produced in chunks of ``_CHUNK_ROWS``, each from its own
    substream of ``seed``; whole chunks are therefore shared between draws
    of different sizes and can be produced independently.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    mixes = mixture_table(int(mtow_tons))
    root = np.random.SeedSequence(seed)
    chunks = []
    n_chunks = -(-n // _CHUNK_ROWS)
    for c, child in enumerate(root.spawn(n_chunks)):
        rows = min(_CHUNK_ROWS, n - c * _CHUNK_ROWS)
        chunks.append(_sample_chunk(mixes, rows, np.random.default_rng(child)))
    return np.vstack(chunks)


# ------------------------------------------------------------- load model


class LoadDensity(NamedTuple):
    lift: np.ndarray
    fuel: np.ndarray
    structure: np.ndarray
    total: np.ndarray


def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} feature columns, got {features.shape[-1]}")
    bad = ~np.isfinite(features)
    if bad.any():
        j = int(np.argwhere(bad)[0][-1])
        raise ValueError(f"non-finite value in feature {FEATURES[j].name!r}")
    return features


def air_density_ratio(altitude) -> np.ndarray:
    """ISA density ratio (troposphere law, isothermal above 11 km)."""
    h = np.asarray(altitude, dtype=float)
    tropo = (1.0 - 2.25577e-5 * np.minimum(h, 11000.0)) ** 4.2559
    return tropo * np.exp(-np.maximum(h - 11000.0, 0.0) / 6341.6)


def _normalized(shape, x):
    area = integrate.trapezoid(shape, x, axis=-1)
    return shape / area[..., None]


def _unit_shape(x, fn):
    # fine-grid normalization so the unit integral does not depend on the station grid
    L = x[-1] if np.ndim(x) else x
    fine = np.linspace(0.0, L, 4001)
    return fn(x) / integrate.trapezoid(fn(fine), fine)


def load_distributions(
    geometry: WingGeometry,
    features,
    wing_mass: float = 0.0,
    stations: np.ndarray | None = None,
    lift_shape: str = "elliptic",
) -> LoadDensity:
    """Spanwise load densities (N/m) on the stations.

    ``features`` is one row of 25 values or an (n, 25) matrix. Lift carries
    ``mass * n_z * g`` in total; fuel and structure are inertial and act
    against it with the same load factor. ``lift_shape="uniform"`` replaces
    the elliptic/chord blend with a constant spanwise shape.
    """
    features = _check_features(features)
    x = geometry.stations() if stations is None else np.asarray(stations, dtype=float)
    L = geometry.span_L
    row = features.ndim == 1
    f = np.atleast_2d(features)
    nz = f[:, I_NZ][:, None]
    mass = f[:, I_MASS][:, None]
    fuel_mass = f[:, I_TANKS].sum(axis=1)[:, None]

    if lift_shape == "uniform":
        shape = np.broadcast_to(np.full_like(x, 1.0 / L), (len(f), len(x)))
    elif lift_shape == "elliptic":
        ell = _unit_shape(x, lambda s: np.sqrt(np.clip(1.0 - (s / L) ** 2, 0.0, None)))
        chd = _unit_shape(x, geometry.chord)
        # dense air at low altitude pushes the loading towards the planform shape
        blend = (0.5 * air_density_ratio(f[:, I_ALT]))[:, None]
        shape = (1.0 - blend) * ell + blend * chd
    else:
        raise ValueError(f"unknown lift shape {lift_shape!r}")

    lift = mass * nz * G * shape
    tank = geometry.tank_chord(x)
    tank_area = _tank_area(geometry)
    fuel = -fuel_mass * nz * G * (tank / tank_area)
    chord_area = 0.5 * (geometry.chord_root_Co + geometry.chord_tip_Ct) * L
    structure = -float(wing_mass) * nz * G * (geometry.chord(x) / chord_area)
    total = lift + fuel + structure
    if row:
        return LoadDensity(lift[0], fuel[0], structure[0], total[0])
    return LoadDensity(lift, fuel, structure, total)


def _tank_area(geometry: WingGeometry) -> float:
    return 0.5 * geometry.tank_Lf * (geometry.tank_Cof + geometry.tank_Ctf)


def shear_and_moment(Q, stations) -> tuple[np.ndarray, np.ndarray]:
    """Shear force and bending moment by trapezoid integration from the tip.

    ``V(x) = -int_x^L Q ds`` and ``M(x) = -int_x^L V ds``, so both vanish at
    the last station. ``Q`` may be a vector or an (n, stations) matrix.
    """
    x = np.asarray(stations, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least 2 stations")
    dx = np.diff(x)
    if np.any(dx <= 0):
        raise ValueError("stations must be strictly increasing")
    if Q.shape[-1] != x.size:
        raise ValueError("Q and stations disagree in length")
    if not np.all(np.isfinite(Q)):
        raise ValueError("Q contains non-finite values")
    V = -_tail_integral(Q, dx)
    M = -_tail_integral(V, dx)
    return V, M


def _tail_integral(f, dx):
    seg = 0.5 * (f[..., 1:] + f[..., :-1]) * dx
    out = np.zeros_like(f)
    out[..., :-1] = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
    return out


def thickness_and_cover_weight(M, geometry: WingGeometry, stations=None):
    """Cover thickness (m), cover mass and wing mass (kg) needed to carry ``M``.

    Returns ``(t, W_cover, W_wing)``; for a matrix of curves, the masses are
    per-row vectors.
    """
    x = geometry.stations() if stations is None else np.asarray(stations, dtype=float)
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("M contains non-finite values")
    h = geometry.box_height(x)
    c = geometry.chord(x)
    denom = h * c * geometry.sigma_max
    if np.any(denom[:-1] <= 0):
        raise ValueError("zero box height or chord at an interior station")
    t = np.abs(M) / denom
    w_cover = 2.0 * geometry.rho * integrate.trapezoid(t * c, x, axis=-1)
    return t, w_cover, w_cover / geometry.cover_weight_fraction


def sized_wing_mass(geometry: WingGeometry, mtow_tons: int, design_nz: float = 2.5,
                    iterations: int = 30) -> float:
    """Wing mass sized for a pull-up at MTOW without fuel, iterated to a fixed point.

    The structure's own inertia relieves the bending moment it is sized for,
    so sizing and loading are solved together.
    """
    x = refined_stations(geometry)
    row = np.array([s.mean for s in FEATURES])
    row[I_MASS] = 1000.0 * mtow_tons
    row[I_NZ] = design_nz
    row[I_ALT] = 0.0
    row[I_TANKS] = 0.0
    w = 0.0
    for _ in range(iterations):
        q = load_distributions(geometry, row, wing_mass=w, stations=x).total
        _, M = shear_and_moment(q, x)
        _, _, w_new = thickness_and_cover_weight(M, geometry, x)
        if abs(w_new - w) < 1e-9 * max(w_new, 1.0):
            return float(w_new)
        w = float(w_new)
    return w


def refined_stations(geometry: WingGeometry, factor: int = _REFINE) -> np.ndarray:
    """The 29 stations with ``factor - 1`` extra points in every interval."""
    base = geometry.stations()
    t = np.arange(factor) / factor
    inner = base[:-1, None] + np.diff(base)[:, None] * t
    return np.append(inner.ravel(), base[-1])


# ----------------------------------------------------------------- dataset


@dataclass
class Dataset:
    features: np.ndarray
    outputs: np.ndarray
    stations: np.ndarray
    mtow_tons: int
    case_kind: np.ndarray
    seed: int | None = None
    noise_rel: float | None = None
    geometry: WingGeometry | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.features.shape[0] != self.outputs.shape[0]:
            raise ValueError("features and outputs differ in row count")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("dataset contains missing or non-finite values")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, rows) -> "Dataset":
        return dataclasses.replace(
            self, features=self.features[rows], outputs=self.outputs[rows],
            case_kind=np.asarray(self.case_kind)[rows])


# per-regime spanwise modifier amplitudes
_ROOT_HEAVY = 0.30
_FLAT = 0.35


def gust_modifier(regime: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Multiplicative spanwise factor giving the two gust curve families."""
    regime = np.asarray(regime)[:, None]
    root_heavy = 1.0 + _ROOT_HEAVY * (1.0 - xi) ** 2
    flat = 1.0 + _FLAT * xi
    return np.where(regime == 1, root_heavy, flat)


def moment_curves(geometry: WingGeometry, features, mtow_tons: int = 238) -> np.ndarray:
    """Noise-free bending moments at the 29 stations for each feature row.

    Structure mass is sized for ``mtow_tons``; loads are integrated on a
    refined grid before being read at the stations, then shaped by the
    gust-family modifier.
    """
    features = np.atleast_2d(_check_features(features))
    wing_mass = sized_wing_mass(geometry, mtow_tons)
    fine = refined_stations(geometry)
    pick = np.arange(0, fine.size, _REFINE)
    xi = geometry.stations() / geometry.span_L
    regime = gust_regime(features)
    out = np.empty((len(features), N_STATIONS))
    for lo in range(0, len(features), _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, len(features))
        q = load_distributions(geometry, features[lo:hi], wing_mass, stations=fine).total
        _, M = shear_and_moment(q, fine)
        out[lo:hi] = M[:, pick] * gust_modifier(regime[lo:hi], xi)
    return out


def generate_dataset(
    geometry: WingGeometry | None = None,
    mtow_tons: int = 238,
    n: int = 1000,
    seed: int = 0,
    noise_rel: float = 0.005,
) -> Dataset:
    """Synthetic gust load cases for one weight variant.

    Moments are integrated on a refined grid and read back at the 29
    stations. The wing mass is sized for the variant, so heavier variants
    also carry a heavier structure.
    """
    geometry = geometry or WingGeometry()
    if not 0.0 <= noise_rel <= 0.05:
        raise ValueError("noise_rel must lie in [0, 0.05]")
    features = sample_features(mtow_tons, n, seed)
    outputs = moment_curves(geometry, features, mtow_tons)
    # chunks are independent: noise for chunk c comes from (seed, c) only
    if noise_rel > 0:
        for c, lo in enumerate(range(0, n, _CHUNK_ROWS)):
            block = outputs[lo:lo + _CHUNK_ROWS]
            rng = np.random.default_rng(np.random.SeedSequence([seed, 1, c]))
            block *= 1.0 + noise_rel * rng.standard_normal(block.shape)
    return Dataset(
        features=features, outputs=outputs, stations=geometry.stations(),
        mtow_tons=int(mtow_tons), case_kind=np.full(n, "gust"),
        seed=seed, noise_rel=noise_rel, geometry=geometry)
