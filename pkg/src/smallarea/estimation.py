"""Areal estimates and prediction intervals for the four methods.

Every method predicts the non-sampled mean ``yhat_ns`` with an interval
``[lo_ns, hi_ns]``; the areal estimate blends it with the observed sampled
mean,

    point = f_c * ybar_s + (1 - f_c) * yhat_ns
    PI    = f_c * ybar_s + (1 - f_c) * [lo_ns, hi_ns].

Fully enumerated areas (``f_c = 1``) get ``ybar_s`` with a zero-width interval.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import conformal, forest, horseshoe, linear, rng
from .areal import ArealDataset, anonymise

METHODS = ("forest", "lasso", "forward", "horseshoe")
DEFAULT_LEVELS = (0.5, 0.8, 0.95)


@dataclass(frozen=True)
class MethodConfig:
    """Hyperparameters for all methods; each method reads its own fields."""

    forest_B: int = 500
    forest_mtry: int = 2
    forest_nodesize: int = 5
    forest_importance_perms: int = 0     # 0 skips the importance p-values
    lasso_grid: int = 100
    lasso_folds: int = 10
    hs_chains: int = 2
    hs_iterations: int = 5000
    hs_burn_in: int = 2500
    hs_thin: int = 1
    forced: int | None = None            # overrides the dataset's design variable
    scaled: bool = True                  # scaled or original split conformal


@dataclass(frozen=True, eq=False)
class AreaEstimates:
    """Estimates for every area of a dataset from one method."""

    area_id: np.ndarray
    method: str
    anonymised: bool
    f: np.ndarray
    point: np.ndarray
    intervals: dict                      # level -> (lower, upper) arrays
    yhat_ns: np.ndarray
    seed: int
    selected: tuple[int, ...] | None = None
    info: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.area_id)

    def width(self, level: float) -> np.ndarray:
        lo, hi = self.intervals[level]
        return hi - lo


def assemble(f, ybar_s, yhat_ns, intervals_ns: dict) -> tuple[np.ndarray, dict]:
    """Blend non-sampled predictions with sampled means.

    Parameters
    ----------
    f : array
        Sampling fractions.
    ybar_s : array
        Sampled means; may be NaN where ``f == 0``.
    yhat_ns : array
        Non-sampled predictions; ignored where ``f == 1``.
    intervals_ns : dict
        ``level -> (lower, upper)`` for the non-sampled mean.
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    ybar_s = np.atleast_1d(np.asarray(ybar_s, dtype=float))
    if np.any((f > 0) & ~np.isfinite(ybar_s)):
        raise ValueError("sampled mean missing for an area with f_c > 0")
    obs = np.where(f > 0, f * np.nan_to_num(ybar_s), 0.0)

    def blend(v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return np.where(f < 1, obs + (1 - f) * np.where(f < 1, v, 0.0), ybar_s)

    point = blend(yhat_ns)
    intervals = {lev: (blend(lo), blend(hi)) for lev, (lo, hi) in intervals_ns.items()}
    return point, intervals


# --------------------------------------------------------------------------
# predictor factories: factory(X, y, n) -> object with predict(X)


def forest_factory(hyper: forest.ForestHyper):
    def make(X, y, n):
        return forest.fit(X, y, hyper)
    return make


def lasso_factory(grid_size=100, folds=10, seed=0, forced=None):
    def make(X, y, n):
        return linear.lasso_fit(X, y, grid_size, min(folds, len(y)), seed, forced)
    return make


class FixedLinear:
    """WLS on a fixed covariate subset (weights ``n_c``)."""

    def __init__(self, X, y, n, columns):
        self.columns = list(columns)
        Z = np.column_stack([np.ones(len(y)), X[:, self.columns]])
        self.coef, _, _ = linear.wls(Z, y, n)

    def predict(self, X):
        X = np.atleast_2d(X)
        return self.coef[0] + X[:, self.columns] @ self.coef[1:]


def fixed_linear_factory(columns):
    def make(X, y, n):
        return FixedLinear(X, y, n, columns)
    return make


# --------------------------------------------------------------------------


def _forced(dataset: ArealDataset, config: MethodConfig) -> int | None:
    return config.forced if config.forced is not None else dataset.design_variable_index


def _nonsampled_intervals(pred: ArealDataset, levels, predict, half_width):
    """Fill ``yhat_ns`` and symmetric intervals for areas with ``n_c < N_c``."""
    M = pred.M
    need = pred.n < pred.N
    yhat = np.full(M, np.nan)
    intervals = {lev: (np.full(M, np.nan), np.full(M, np.nan)) for lev in levels}
    if np.any(need):
        yhat[need] = predict(pred.xbar_ns[need])
        for lev in levels:
            half = half_width(lev, pred.N[need], pred.n[need], pred.xbar_ns[need])
            intervals[lev][0][need] = yhat[need] - half
            intervals[lev][1][need] = yhat[need] + half
    return yhat, intervals


def conformal_estimates(dataset: ArealDataset, factory, levels, seed: int,
                        scaled: bool = True):
    """Split-conformal predictions for the rows of ``dataset`` that are not
    fully enumerated. Returns ``(calibration, yhat_ns, intervals_ns)``."""
    _, Xs, ys, ns = dataset.fitting_data()
    cal = conformal.calibrate(Xs, ys, ns, factory, levels, scaled,
                              rng.derive_seed(seed, rng.SPLIT),
                              area_ids=dataset.fitting_ids())
    yhat, iv = conformal_predictions(cal, dataset, levels)
    return cal, yhat, iv


def conformal_predictions(cal: conformal.ConformalCalibration,
                          dataset: ArealDataset, levels):
    return _nonsampled_intervals(dataset, levels, cal.trained.predict,
                                 lambda lev, N, n, _x: cal.half_width(lev, N, n))


class FittedMethod:
    """A method trained once on the sampled areas of a dataset.

    :meth:`estimate` assembles areal estimates for known or anonymised
    areas from the same fit.
    """

    def __init__(self, dataset: ArealDataset, method: str, config: MethodConfig,
                 levels, seed: int):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        self.dataset = dataset
        self.method = method
        self.config = config
        self.levels = tuple(sorted(float(l) for l in levels))
        self.seed = seed
        self.selected: tuple[int, ...] | None = None
        self.info: dict = {}
        forced = _forced(dataset, config)
        _, Xs, ys, ns = dataset.fitting_data()
        method_seed = rng.derive_seed(seed, METHODS.index(method))
        self._method_seed = method_seed

        if method in ("forest", "lasso"):
            if method == "forest":
                p_cand = dataset.p - (forced is not None)
                hyper = forest.ForestHyper(config.forest_B,
                                           min(config.forest_mtry, p_cand),
                                           config.forest_nodesize,
                                           rng.derive_seed(method_seed, rng.FOREST), forced)
                factory = forest_factory(hyper)
            else:
                factory = lasso_factory(config.lasso_grid, config.lasso_folds,
                                        rng.derive_seed(method_seed, rng.LASSO_CV), forced)
            cal = conformal.calibrate(Xs, ys, ns, factory, self.levels, config.scaled,
                                      rng.derive_seed(method_seed, rng.SPLIT),
                                      area_ids=dataset.fitting_ids())
            self.info["calibration"] = cal
            if method == "lasso":
                self.selected = cal.trained.selected
                self.info["lambda_star"] = cal.trained.lambda_star
            elif config.forest_importance_perms > 0:
                pv, _ = forest.importance_pvalues(
                    Xs, ys, hyper, config.forest_importance_perms,
                    rng.derive_seed(method_seed, rng.PERMUTATION))
                self.info["importance_pvalues"] = pv
                self.selected = tuple(int(j) for j in np.flatnonzero(pv < 0.05))
        elif method == "forward":
            model = linear.forward_fit(Xs, ys, ns, forced)
            self.selected = tuple(model.selected)
            self.info["model"] = model
        else:
            cfg = horseshoe.HsConfig(config.hs_chains, config.hs_iterations,
                                     config.hs_burn_in, config.hs_thin,
                                     rng.derive_seed(method_seed, rng.MCMC))
            samples = horseshoe.hs_fit(Xs, ys, ns, cfg, forced)
            self.selected = horseshoe.hs_selected(samples)
            self.info["samples"] = samples
            self.info["max_rhat"] = samples.max_rhat()

    def predict(self, pred: ArealDataset):
        """``(yhat_ns, intervals_ns)`` for the areas of ``pred`` with ``n_c < N_c``."""
        levels = self.levels
        if self.method in ("forest", "lasso"):
            return conformal_predictions(self.info["calibration"], pred, levels)
        if self.method == "forward":
            model = self.info["model"]

            def half(lev, N, n, x):
                q = stats.norm.ppf(0.5 + lev / 2)
                return q * np.sqrt(model.prediction_variance(x, N - n))
            return _nonsampled_intervals(pred, levels, model.predict, half)
        return horseshoe_predictions(self.info["samples"], pred, levels,
                                     rng.derive_seed(self._method_seed, rng.PREDICTIVE))

    def estimate(self, anonymised: bool = False) -> AreaEstimates:
        pred = anonymise(self.dataset) if anonymised else self.dataset
        yhat, iv = self.predict(pred)
        point, intervals = assemble(pred.f, pred.ybar_s, yhat, iv)
        return AreaEstimates(pred.area_id, self.method, anonymised, pred.f, point,
                             intervals, yhat, self.seed, self.selected, self.info)


def run_method(dataset: ArealDataset, method: str,
               config: MethodConfig = MethodConfig(),
               levels=DEFAULT_LEVELS, anonymised: bool = False,
               seed: int = 0) -> AreaEstimates:
    """Fit ``method`` on the sampled areas and estimate every area.

    With ``anonymised`` the models are still trained on the real sampled
    aggregates but every area is treated as non-sampled (``f_c = 0``) when
    the estimates are assembled.
    """
    return FittedMethod(dataset, method, config, levels, seed).estimate(anonymised)


def horseshoe_predictions(samples, dataset: ArealDataset, levels, seed: int,
                          chunk: int = 512):
    """Posterior-predictive mean and empirical quantile intervals for every
    area that is not fully enumerated."""
    M = dataset.M
    need = np.flatnonzero(dataset.n < dataset.N)
    yhat = np.full(M, np.nan)
    iv = {lev: (np.full(M, np.nan), np.full(M, np.nan)) for lev in levels}
    probs = sorted({q for lev in levels for q in (0.5 - lev / 2, 0.5 + lev / 2)})
    for start in range(0, len(need), chunk):
        idx = need[start:start + chunk]
        g = rng.stream(seed, rng.PREDICTIVE, start)
        draws = horseshoe.hs_predictive(samples, dataset.xbar_ns[idx],
                                        dataset.N[idx] - dataset.n[idx], g)
        yhat[idx] = draws.mean(axis=0)
        qs = dict(zip(probs, np.quantile(draws, probs, axis=0)))
        for lev in levels:
            iv[lev][0][idx] = qs[0.5 - lev / 2]
            iv[lev][1][idx] = qs[0.5 + lev / 2]
    return yhat, iv


def horseshoe_rank_histograms(samples, dataset: ArealDataset, areas, seed: int = 0):
    """Posterior rank distributions of the areal estimates for ``areas``.

    Per retained draw, each area's estimate is ``f ybar_s + (1 - f) yhat^(l)``
    with ``yhat^(l)`` a posterior predictive draw.
    """
    areas = np.asarray(areas, dtype=int)
    sub = dataset.subset(areas)
    g = rng.stream(seed, rng.PREDICTIVE, 10**6)
    f = sub.f
    est = np.tile(np.where(f > 0, np.nan_to_num(sub.ybar_s), 0.0), (samples.L, 1))
    part = sub.n < sub.N
    if np.any(part):
        draws = horseshoe.hs_predictive(samples, sub.xbar_ns[part],
                                        sub.N[part] - sub.n[part], g)
        est[:, part] = f[part] * np.nan_to_num(sub.ybar_s[part]) + (1 - f[part]) * draws
    return horseshoe.posterior_ranks(est, sub.area_id)


ESTIMATE_LEVELS = (0.5, 0.8, 0.95)


def write_estimates_csv(path, results, levels=ESTIMATE_LEVELS) -> None:
    """``area_id,method,anonymised,point,lo50,hi50,lo80,hi80,lo95,hi95``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "method", "anonymised", "point",
                    *[f"{s}{round(l * 100)}" for l in levels for s in ("lo", "hi")]])
        for est in results:
            for i in range(len(est)):
                row = [est.area_id[i], est.method, int(est.anonymised),
                       repr(float(est.point[i]))]
                for l in levels:
                    lo, hi = est.intervals[l]
                    row += [repr(float(lo[i])), repr(float(hi[i]))]
                w.writerow(row)
