"""Split-conformal prediction intervals for areal non-sampled means.

The sampled areas are split at random into a training half ``S1`` and a
calibration half ``S2``. A predictor is fitted on ``S1`` and the absolute
residuals ``|ybar_c - yhat_c|`` are computed on ``S2``. In the scaled variant
each residual is multiplied by ``sqrt(n_c)`` and the calibrated quantile is
divided by ``sqrt(N_c - n_c)`` when the interval is formed, which accounts
for areal means whose variance is ``sigma^2 / count``.

``d`` for level ``1 - alpha`` is the ``k``-th smallest residual with
``k = ceil((|S2| + 1)(1 - alpha))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable

import numpy as np

from . import rng

PredictorFactory = Callable[[np.ndarray, np.ndarray, np.ndarray], Any]


class ConformalError(ValueError):
    pass


def k_alpha(n_cal: int, level: float) -> int:
    """Order statistic used for confidence ``level`` with ``n_cal``
    calibration residuals."""
    # guard against e.g. (9 + 1) * 0.8 evaluating to 8.000000000000002
    return max(1, math.ceil((n_cal + 1) * level - 1e-9))


def max_level(n_cal: int) -> float:
    """Largest confidence level attainable with ``n_cal`` residuals."""
    return n_cal / (n_cal + 1)


@dataclass(frozen=True, eq=False)
class ConformalCalibration:
    trained: Any
    d: dict
    scaled: bool
    split_seed: int
    train_index: np.ndarray
    cal_index: np.ndarray
    cal_n: np.ndarray
    residuals: np.ndarray
    area_ids: np.ndarray | None = field(default=None, repr=False)

    @property
    def scaled_residuals(self) -> np.ndarray:
        return self.residuals * np.sqrt(self.cal_n)

    def half_width(self, level: float, N, n) -> np.ndarray:
        if level not in self.d:
            raise ConformalError(f"level {level} was not calibrated; have {sorted(self.d)}")
        N = np.asarray(N, dtype=float)
        n = np.asarray(n, dtype=float)
        if not self.scaled:
            return np.full(np.broadcast(N, n).shape, self.d[level])
        if np.any(N - n <= 0):
            raise ConformalError("scaled interval needs N_c > n_c")
        return self.d[level] / np.sqrt(N - n)

    def write_audit(self, path) -> None:
        """CSV of ``area_id,n_c,residual,scaled_residual`` for ``S2``."""
        ids = (self.area_ids[self.cal_index] if self.area_ids is not None
               else self.cal_index)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["area_id", "n_c", "residual", "scaled_residual"])
            for a, nc, r, sr in zip(ids, self.cal_n, self.residuals,
                                    self.scaled_residuals):
                w.writerow([a, int(nc), repr(float(r)), repr(float(sr))])


def split_halves(m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random split of ``range(m)``; the training half gets the extra row."""
    perm = rng.stream(seed, rng.SPLIT).permutation(m)
    n_cal = m // 2
    return np.sort(perm[n_cal:]), np.sort(perm[:n_cal])


def calibrate(X, y, n, factory: PredictorFactory, levels: Iterable[float],
              scaled: bool = True, seed: int = 0,
              area_ids=None) -> ConformalCalibration:
    """Fit ``factory`` on one half of the sampled areas, calibrate on the other.

    Parameters
    ----------
    X, y, n : arrays
        Sampled covariate means ``(m, p)``, outcome means and sample sizes.
    factory : callable
        ``factory(X, y, n)`` returns a fitted object with ``predict(X)``.
    levels : iterable of float
        Confidence levels ``1 - alpha``; all share one split and one fit.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    m = len(y)
    if m < 4:
        raise ConformalError("split conformal needs at least 4 sampled areas")
    tr, cal = split_halves(m, seed)
    levels = sorted(set(float(l) for l in levels))
    for lev in levels:
        if not 0.0 < lev < 1.0:
            raise ConformalError(f"level {lev} outside (0, 1)")
        if k_alpha(len(cal), lev) > len(cal):
            raise ConformalError(
                f"level {lev} needs more than {len(cal)} calibration residuals; "
                f"max attainable level is {max_level(len(cal)):.4f}")
    model = factory(X[tr], y[tr], n[tr])
    res = np.abs(y[cal] - np.asarray(model.predict(X[cal]), dtype=float))
    return ConformalCalibration(model, _quantiles(res, n[cal], levels, scaled), scaled,
                                seed, tr, cal, n[cal], res,
                                None if area_ids is None else np.asarray(area_ids))


def _quantiles(res, n_cal, levels, scaled: bool) -> dict:
    score = res * np.sqrt(n_cal) if scaled else res
    ordered = np.sort(score, kind="stable")
    return {lev: float(ordered[k_alpha(len(res), lev) - 1]) for lev in levels}


def recalibrate(cal: ConformalCalibration, scaled: bool) -> ConformalCalibration:
    """The same split and fitted model scored with the other variant."""
    return replace(cal, d=_quantiles(cal.residuals, cal.cal_n, sorted(cal.d), scaled),
                   scaled=scaled)


def interval(cal: ConformalCalibration, xbar_ns, N, n, level: float):
    """Prediction and interval for non-sampled means.

    Returns ``(yhat_ns, lower, upper)`` arrays over the rows of ``xbar_ns``.
    """
    yhat = np.asarray(cal.trained.predict(np.atleast_2d(xbar_ns)), dtype=float)
    half = cal.half_width(level, N, n)
    return yhat, yhat - half, yhat + half
