"""Sampling designs applied to a finite population, and area-level k-fold splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .areal import ArealDataset, from_unit_arrays
from .popgen import FinitePopulation

KINDS = ("Stratified", "OneStage", "TwoStage")


@dataclass(frozen=True)
class Design:
    """A sampling design.

    ``within_fraction`` and ``within_fixed`` are mutually exclusive and
    ignored for ``OneStage``, which takes every unit of a selected area.
    """

    kind: str
    area_fraction: float = 1.0
    within_fraction: float | None = None
    within_fixed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}")
        if not 0.0 < self.area_fraction <= 1.0:
            raise ValueError("area_fraction must lie in (0, 1]")
        if self.kind == "Stratified" and self.area_fraction != 1.0:
            raise ValueError("stratified designs select every area")
        if self.kind != "OneStage":
            if (self.within_fraction is None) == (self.within_fixed is None):
                raise ValueError("give exactly one of within_fraction, within_fixed")
            if self.within_fraction is not None and not 0.0 < self.within_fraction <= 1.0:
                raise ValueError("within_fraction must lie in (0, 1]")
            if self.within_fixed is not None and self.within_fixed < 1:
                raise ValueError("within_fixed must be >= 1")

    @classmethod
    def stratified(cls, q: float | None = None, n: int | None = None) -> Design:
        return cls("Stratified", 1.0, q, n)

    @classmethod
    def one_stage(cls, area_fraction: float = 0.5) -> Design:
        return cls("OneStage", area_fraction)

    @classmethod
    def two_stage(cls, area_fraction: float = 0.5, q: float | None = None,
                  n: int | None = None) -> Design:
        return cls("TwoStage", area_fraction, q, n)

    def label(self) -> str:
        if self.kind == "OneStage":
            return f"OneStage(m={self.area_fraction:g}M)"
        w = (f"n={self.within_fixed}" if self.within_fixed is not None
             else f"q={self.within_fraction:g}")
        return f"{self.kind}(m={self.area_fraction:g}M,{w})"


# Designs 1-5 of the scaled split-conformal study.
SC_SCENARIOS = {
    1: Design.stratified(q=0.5),
    2: Design.stratified(q=0.7),
    3: Design.one_stage(0.5),
    4: Design.two_stage(0.5, q=0.5),
    5: Design.two_stage(0.5, q=0.7),
}


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def within_sizes(design: Design, N: np.ndarray) -> np.ndarray:
    """Number of units sampled in each selected area of size ``N``."""
    N = np.asarray(N, dtype=np.int64)
    if design.kind == "OneStage":
        return N.copy()
    if design.within_fixed is not None:
        if np.any(design.within_fixed > N):
            raise ValueError(
                f"within_fixed={design.within_fixed} exceeds a selected area's "
                f"size (min {int(N.min())})")
        return np.full(len(N), design.within_fixed, dtype=np.int64)
    return np.clip(round_half_up(design.within_fraction * N), 1, N)


def draw_units(pop: FinitePopulation, design: Design, seed: int) -> np.ndarray:
    """Indices (into ``pop.y``) of the sampled units, grouped by area."""
    g = rng.stream(seed, rng.DESIGN)
    M = pop.M
    if design.area_fraction < 1.0:
        m = max(1, int(round_half_up(design.area_fraction * M)))
        areas = np.sort(g.choice(M, size=m, replace=False))
    else:
        areas = np.arange(M)
    n = within_sizes(design, pop.sizes[areas])
    chosen = []
    for c, nc in zip(areas, n):
        start, size = pop.offsets[c], pop.sizes[c]
        if nc == size:
            chosen.append(np.arange(start, start + size))
        else:
            chosen.append(start + np.sort(g.choice(size, size=nc, replace=False)))
    return np.concatenate(chosen)


def draw(pop: FinitePopulation, design: Design, seed: int,
         design_variable: str | None = None) -> ArealDataset:
    """Sample from ``pop`` under ``design`` and aggregate to areal rows.

    The result has one row per population area; unselected areas have
    ``n_c = 0``.
    """
    units = draw_units(pop, design, seed)
    area_index = np.repeat(np.arange(pop.M), pop.sizes)[units]
    return from_unit_arrays(pop.census(), area_index, pop.y[units], pop.X[units],
                            design_variable)


def kfold_split(dataset: ArealDataset, k: int, stratum_balance: bool = False,
                seed: int = 0) -> list[np.ndarray]:
    """Partition the sampled areas into ``k`` folds of area positions.

    With ``stratum_balance`` the areas of each stratum are dealt round-robin
    across folds (continuing where the previous stratum stopped), so every
    fold gets the floor or ceiling of ``count / k`` areas from each stratum.
    """
    sampled = np.flatnonzero(dataset.n > 0)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(sampled):
        raise ValueError(f"k={k} exceeds the {len(sampled)} sampled areas")
    g = rng.stream(seed, rng.FOLDS)
    folds: list[list[int]] = [[] for _ in range(k)]
    if stratum_balance:
        strata = dataset.stratum[sampled]
        groups = [sampled[strata == s] for s in sorted(set(strata.tolist()))]
    else:
        groups = [sampled]
    pos = 0
    for grp in groups:
        for a in g.permutation(grp):
            folds[pos % k].append(int(a))
            pos += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]
