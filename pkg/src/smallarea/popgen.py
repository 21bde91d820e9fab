"""Synthetic finite populations used in the simulation studies.

Four generators are available:

``S31``
    six i.i.d. N(0, 1) unit covariates and
    ``y ~ N(9.5 + x1 - x2 + 2 x3 - x4 + 2 x5 + x6, 1)``.
``A``
    100 i.i.d. N(0, 1) unit covariates, ``y ~ N(20 + x'beta, 0.5^2)`` with
    ten non-zero coefficients.
``B``
    as ``A`` with ``beta / 10`` and equicorrelated covariates (correlation 0.5).
``C``
    100 area-level Uniform(-1, 1) covariates and
    ``y ~ N(x1^2 + exp(x2^2), 0.3)`` (0.3 is the variance).

Each area is drawn from its own stream so populations are reproducible
bit for bit and independent of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .areal import CensusTable, write_census_csv, write_survey_csv

KINDS = ("S31", "A", "B", "C")

BETA_S31 = np.array([1.0, -1.0, 2.0, -1.0, 2.0, 1.0])
BETA_A = np.concatenate([[1, -1, 2, -1, 2, 1, 2, 1, -1, 1], np.zeros(90)]).astype(float)
BETA_B = BETA_A / 10.0


@dataclass(frozen=True)
class PopulationSpec:
    kind: str = "S31"
    M: int = 500
    N_min: int = 50
    N_max: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown population kind {self.kind!r}; expected one of {KINDS}")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not 1 <= self.N_min <= self.N_max:
            raise ValueError("need 1 <= N_min <= N_max")

    @property
    def p(self) -> int:
        return 6 if self.kind == "S31" else 100

    @property
    def true_beta(self) -> np.ndarray | None:
        return {"S31": BETA_S31, "A": BETA_A, "B": BETA_B}.get(self.kind)

    @property
    def intercept(self) -> float | None:
        return {"S31": 9.5, "A": 20.0, "B": 20.0}.get(self.kind)


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """Units stored contiguously by area: area ``c`` owns
    ``y[offsets[c]:offsets[c + 1]]`` and the matching rows of ``X``."""

    spec: PopulationSpec
    sizes: np.ndarray
    offsets: np.ndarray
    y: np.ndarray
    X: np.ndarray
    true_area_means: np.ndarray
    xbar: np.ndarray
    area_id: np.ndarray
    stratum: np.ndarray

    @property
    def M(self) -> int:
        return len(self.sizes)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(f"x{j + 1}" for j in range(self.p))

    def area_slice(self, c: int) -> slice:
        return slice(self.offsets[c], self.offsets[c + 1])

    def census(self) -> CensusTable:
        return CensusTable(self.area_id, self.stratum, self.sizes, self.xbar,
                           self.covariate_names)

    def to_csv(self, survey_path, census_path) -> None:
        """Write every unit as a survey record plus the census table."""
        unit_area = np.repeat(self.area_id, self.sizes)
        unit_stratum = np.repeat(self.stratum, self.sizes)
        write_survey_csv(survey_path, unit_area, unit_stratum, self.y, self.X,
                         self.covariate_names)
        write_census_csv(census_path, self.census())


def area_sizes(M: int, N_min: int, N_max: int, seed: int) -> np.ndarray:
    """Uniform integer sizes on ``[N_min, N_max]`` with both bounds present."""
    g = rng.stream(seed, rng.AREA_SIZES)
    sizes = g.integers(N_min, N_max + 1, size=M)
    if M >= 2:
        i, j = g.choice(M, size=2, replace=False)
        sizes[i], sizes[j] = N_min, N_max
    else:
        sizes[0] = N_min
    return sizes.astype(np.int64)


def _area_units(kind: str, g: np.random.Generator, size: int):
    if kind == "S31":
        X = g.standard_normal((size, 6))
        y = 9.5 + X @ BETA_S31 + g.standard_normal(size)
    elif kind == "A":
        X = g.standard_normal((size, 100))
        y = 20.0 + X @ BETA_A + 0.5 * g.standard_normal(size)
    elif kind == "B":
        u = g.standard_normal((size, 1))
        X = np.sqrt(0.5) * u + np.sqrt(0.5) * g.standard_normal((size, 100))
        y = 20.0 + X @ BETA_B + 0.5 * g.standard_normal(size)
    else:
        x_area = g.uniform(-1.0, 1.0, size=100)
        X = np.broadcast_to(x_area, (size, 100))
        mu = x_area[0] ** 2 + np.exp(x_area[1] ** 2)
        y = mu + np.sqrt(0.3) * g.standard_normal(size)
    return X, y


def generate(spec: PopulationSpec) -> FinitePopulation:
    """Draw the finite population described by ``spec``."""
    sizes = area_sizes(spec.M, spec.N_min, spec.N_max, spec.seed)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    p = spec.p
    X = np.empty((offsets[-1], p))
    y = np.empty(offsets[-1])
    for c in range(spec.M):
        g = rng.stream(spec.seed, rng.POPULATION, c)
        sl = slice(offsets[c], offsets[c + 1])
        X[sl], y[sl] = _area_units(spec.kind, g, int(sizes[c]))
    # bincount sums in unit order, matching how sampled means are aggregated,
    # so a fully enumerated area's sampled mean equals its true mean exactly
    counts = sizes.astype(float)
    area = np.repeat(np.arange(spec.M), sizes)
    true_means = np.bincount(area, weights=y, minlength=spec.M) / counts
    xbar = np.column_stack([np.bincount(area, weights=X[:, j], minlength=spec.M)
                            for j in range(p)]) / counts[:, None]
    width = len(str(spec.M))
    area_id = np.array([f"A{c:0{width}d}" for c in range(spec.M)], dtype=object)
    stratum = np.full(spec.M, "all", dtype=object)
    return FinitePopulation(spec, sizes, offsets, y, X, true_means, xbar,
                            area_id, stratum)


@dataclass(frozen=True, eq=False)
class SurveyStandIn:
    """Sampled units plus a census for every area, shaped like a real
    household survey linked to a census (no population outcomes)."""

    census: CensusTable
    unit_area: np.ndarray      # area position of each sampled unit
    y: np.ndarray
    X: np.ndarray

    def to_csv(self, survey_path, census_path) -> None:
        c = self.census
        write_survey_csv(survey_path, c.area_id[self.unit_area], c.stratum[self.unit_area],
                         self.y, self.X, c.covariate_names)
        write_census_csv(census_path, c)


def survey_standin(seed: int = 0, M: int = 5019, p: int = 174,
                   sampled: dict | None = None, units_per_area: int = 15,
                   rural_share: float = 0.06) -> SurveyStandIn:
    """Synthetic survey/census pair.

    Areas are ``rural`` or ``urban``; ``sampled`` maps stratum to the number
    of sampled areas (default 8 rural and 128 urban). Covariates are
    area-level Gaussian means with unit-level Gaussian spread, and the unit
    outcome is ``9 + 0.4 urban + x' beta + N(0, 0.5^2)`` with five non-zero
    coefficients.
    """
    sampled = {"rural": 8, "urban": 128} if sampled is None else sampled
    g = rng.stream(seed, rng.POPULATION, 0)
    n_rural = max(int(round(rural_share * M)), sampled["rural"])
    stratum = np.array(["urban"] * M, dtype=object)
    stratum[g.choice(M, size=n_rural, replace=False)] = "rural"
    sizes = area_sizes(M, 50, 500, seed)
    xbar = g.standard_normal((M, p))
    beta = np.zeros(p)
    beta[:5] = [0.3, -0.2, 0.15, 0.1, -0.1]
    areas = np.sort(np.concatenate([
        g.choice(np.flatnonzero(stratum == s), size=k, replace=False)
        for s, k in sorted(sampled.items())]))
    unit_area = np.repeat(areas, units_per_area)
    X = xbar[unit_area] + g.standard_normal((len(unit_area), p))
    urban = (stratum[unit_area] == "urban").astype(float)
    y = 9.0 + 0.4 * urban + X @ beta + 0.5 * g.standard_normal(len(unit_area))
    width = len(str(M))
    ids = np.array([f"EA{c:0{width}d}" for c in range(M)], dtype=object)
    names = tuple(f"v{j + 1:03d}" for j in range(p))
    return SurveyStandIn(CensusTable(ids, stratum, sizes, xbar, names), unit_area, y, X)
