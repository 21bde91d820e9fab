"""Scoring of areal estimates against known truth."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


def interval_score(lower, upper, alpha, truth):
    """Proper interval score of ``[lower, upper]`` at level ``1 - alpha``:

        (U - L) + (2 / alpha) * ((L - y) 1{L > y} + (y - U) 1{U < y})
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any((alpha <= 0) | (alpha >= 1)):
        raise ValueError("alpha must lie in (0, 1)")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if np.any(lower > upper):
        raise ValueError("lower must not exceed upper")
    below = np.where(lower > truth, lower - truth, 0.0)
    above = np.where(upper < truth, truth - upper, 0.0)
    out = (upper - lower) + (2.0 / alpha) * (below + above)
    return float(out) if out.ndim == 0 else out


def covered(lower, upper, truth) -> np.ndarray:
    return (np.asarray(lower) <= truth) & (truth <= np.asarray(upper))


def selection_frequency(selected_sets, p: int) -> np.ndarray:
    """Fraction of replicates in which each covariate index was selected."""
    sets = list(selected_sets)
    counts = np.zeros(p)
    for s in sets:
        counts[list(set(s))] += 1
    return counts / len(sets) if sets else counts


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Right-continuous empirical CDF as ``(sorted unique values, F(value))``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("ecdf needs at least one value")
    uniq, counts = np.unique(v, return_counts=True)
    return uniq, np.cumsum(counts) / v.size


def ecdf_at(values, x) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float).ravel())
    return np.searchsorted(v, x, side="right") / v.size


@dataclass
class _Cell:
    levels: tuple
    n: int = 0
    sum_err: float = 0.0
    sum_sq: float = 0.0
    cover: dict = field(default_factory=dict)
    score: dict = field(default_factory=dict)
    width: dict = field(default_factory=dict)
    area_err: dict = field(default_factory=lambda: defaultdict(float))
    area_cnt: dict = field(default_factory=lambda: defaultdict(int))
    replicates: set = field(default_factory=set)

    def __post_init__(self):
        for lev in self.levels:
            self.cover[lev] = 0
            self.score[lev] = 0.0
            self.width[lev] = 0.0


GROUPS = ("sampled", "nonsampled")


class MetricsAccumulator:
    """Accumulates per-(area, replicate) errors into report cells.

    A cell is ``(scenario, method, group, anonymised)`` where ``group`` says
    whether the area was sampled in that replicate. Accumulation order does
    not affect the report beyond floating-point summation order, so add
    replicates in a fixed order for byte-identical output.
    """

    def __init__(self, levels=(0.5, 0.8, 0.95)):
        self.levels = tuple(sorted(levels))
        self.cells: dict = {}

    def add(self, scenario: str, estimates, truth, sampled_mask,
            replicate: int, skip=None) -> None:
        """Add one replicate of ``estimates``; areas flagged in ``skip``
        (e.g. fully enumerated ones) are left out."""
        truth = np.asarray(truth, dtype=float)
        if len(truth) != len(estimates.point):
            raise ValueError("truth and estimates cover different areas")
        sampled_mask = np.asarray(sampled_mask, dtype=bool)
        err = estimates.point - truth
        keep = (np.ones(len(truth), dtype=bool) if skip is None
                else ~np.asarray(skip, dtype=bool))
        for group, mask in (("sampled", sampled_mask), ("nonsampled", ~sampled_mask)):
            idx = np.flatnonzero(mask & keep)
            if idx.size == 0:
                continue
            key = (scenario, estimates.method, group, bool(estimates.anonymised))
            cell = self.cells.setdefault(key, _Cell(self.levels))
            e = err[idx]
            cell.n += idx.size
            cell.sum_err += float(e.sum())
            cell.sum_sq += float(e @ e)
            cell.replicates.add(replicate)
            for i, ei in zip(idx, e):
                a = estimates.area_id[i]
                cell.area_err[a] += float(ei)
                cell.area_cnt[a] += 1
            for lev in self.levels:
                lo, hi = estimates.intervals[lev]
                cell.cover[lev] += int(covered(lo[idx], hi[idx], truth[idx]).sum())
                cell.score[lev] += float(np.sum(
                    interval_score(lo[idx], hi[idx], 1 - lev, truth[idx])))
                cell.width[lev] += float(np.sum(hi[idx] - lo[idx]))

    def report(self, bias_scale: float = 1.0) -> list[dict]:
        """One dict per cell, sorted by key.

        ``abs_bias`` is ``|mean error|`` pooled over all (area, replicate)
        pairs of the cell; ``area_abs_bias`` averages over areas the absolute
        per-area mean error across replicates. Both are multiplied by
        ``bias_scale`` (100 gives the x100 presentation).
        """
        rows = []
        for key in sorted(self.cells, key=lambda k: (k[0], k[1], k[2], k[3])):
            c = self.cells[key]
            if c.n == 0:
                raise ValueError(f"empty group {key}")
            area_bias = np.mean([abs(c.area_err[a] / c.area_cnt[a]) for a in c.area_err])
            row = {"scenario": key[0], "method": key[1], "group": key[2],
                   "anonymised": int(key[3]), "replicates": len(c.replicates),
                   "pairs": c.n, "abs_bias": bias_scale * abs(c.sum_err / c.n),
                   "area_abs_bias": bias_scale * float(area_bias),
                   "mse": c.sum_sq / c.n}
            for lev in self.levels:
                tag = round(lev * 100)
                row[f"cov{tag}"] = c.cover[lev] / c.n
                row[f"score{tag}"] = c.score[lev] / c.n
                row[f"width{tag}"] = c.width[lev] / c.n
            rows.append(row)
        return rows


def score_replicates(replicates, truth, levels=(0.5, 0.8, 0.95),
                     scenario: str = "") -> list[dict]:
    """Score estimates from several replicates.

    Parameters
    ----------
    replicates : iterable of (estimates_list, sampled_mask)
        Per replicate, the :class:`AreaEstimates` of each method/variant and
        the mask of areas sampled in that replicate.
    truth : array
        True areal means, aligned with the estimates.
    """
    acc = MetricsAccumulator(levels)
    for r, (ests, mask) in enumerate(replicates):
        for est in ests:
            acc.add(scenario, est, truth, mask, r)
    return acc.report()


def find(report: list[dict], **match) -> dict:
    hits = [r for r in report if all(r.get(k) == v for k, v in match.items())]
    if len(hits) != 1:
        raise KeyError(f"{len(hits)} report rows match {match}")
    return hits[0]


def write_report_csv(path, report: list[dict]) -> None:
    if not report:
        raise ValueError("empty report")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(report[0]))
        w.writeheader()
        for row in report:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_ecdf_csv(path, series: dict) -> None:
    """``series,value,cdf`` rows for each named sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "value", "cdf"])
        for name, values in series.items():
            x, F = ecdf(values)
            for xi, Fi in zip(x, F):
                w.writerow([name, repr(float(xi)), repr(float(Fi))])
