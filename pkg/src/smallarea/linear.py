"""Linear predictors: AIC forward selection (weighted) and cross-validated LASSO.

Forward selection models ``ybar_c ~ N(z_c' eta, sigma^2 / n_c)``, i.e. weighted
least squares with weights ``n_c``. The LASSO minimises the unweighted
objective ``||y - X beta||^2 / (2m) + lambda * ||beta||_1`` over standardized
covariates by cyclic coordinate descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from . import rng

# --------------------------------------------------------------------------
# Weighted least squares and forward selection


def wls(Z, y, w):
    """Weighted least squares. Returns ``(coef, weighted_ssr, rank)``."""
    sw = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)
    r = y - Z @ coef
    return coef, float(np.sum(w * r * r)), int(rank)


def gaussian_aic(wssr: float, w: np.ndarray, k_coef: int) -> float:
    """AIC of ``y_c ~ N(mu_c, sigma^2 / w_c)`` at the ML variance estimate.

    Counts ``k_coef`` mean parameters plus ``sigma``.
    """
    m = len(w)
    s2 = wssr / m
    with np.errstate(divide="ignore"):
        loglik = -0.5 * m * (np.log(2 * np.pi * s2) + 1.0) + 0.5 * np.sum(np.log(w))
    return float(-2.0 * loglik + 2.0 * (k_coef + 1))


@dataclass(frozen=True)
class ForwardModel:
    selected: tuple[int, ...]
    eta_hat: np.ndarray           # intercept first
    cov_eta: np.ndarray
    sigma_hat: float
    aic_path: tuple[float, ...]   # AIC of the accepted models, intercept-only first
    p: int

    def design(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([np.ones(len(X)), X[:, list(self.selected)]])

    def predict(self, X) -> np.ndarray:
        return self.design(X) @ self.eta_hat

    def prediction_variance(self, X, n_nonsampled) -> np.ndarray:
        """``z' V(eta) z + sigma^2 / (N_c - n_c)``; the second term is dropped
        where there are no non-sampled units."""
        Z = self.design(X)
        first = np.einsum("ij,jk,ik->i", Z, self.cov_eta, Z)
        nn = np.asarray(n_nonsampled, dtype=float)
        with np.errstate(divide="ignore"):
            second = np.where(nn > 0, self.sigma_hat ** 2 / nn, 0.0)
        return first + second


def forward_step_aics(X, y, w, selected) -> np.ndarray:
    """AIC of adding each covariate to ``selected`` (inf for selected or
    rank-deficient candidates)."""
    m, p = X.shape
    base = np.column_stack([np.ones(m), X[:, list(selected)]])
    out = np.full(p, np.inf)
    for j in range(p):
        if j in selected:
            continue
        Z = np.column_stack([base, X[:, j]])
        _, wssr, rank = wls(Z, y, w)
        if rank < Z.shape[1]:
            continue
        out[j] = gaussian_aic(wssr, w, Z.shape[1])
    return out


def forward_fit(X, y, n, forced: int | None = None) -> ForwardModel:
    """Forward selection by AIC, then a final WLS refit.

    Covariates are added one at a time, each time the one giving the lowest
    AIC, until no addition lowers the AIC or ``K = m - 2``. A ``forced``
    covariate is appended before the refit when it was not selected.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(n, dtype=float)
    m, p = X.shape
    if m < 3:
        raise ValueError("forward selection needs at least 3 training rows")
    selected: list[int] = []
    _, wssr, _ = wls(np.ones((m, 1)), y, w)
    current = gaussian_aic(wssr, w, 1)
    path = [current]
    while len(selected) < min(p, m - 2):
        aics = forward_step_aics(X, y, w, selected)
        j = int(np.argmin(aics))
        if not aics[j] < current:
            break
        selected.append(j)
        current = float(aics[j])
        path.append(current)
    if forced is not None and forced not in selected:
        selected.append(forced)
    while True:
        Z = np.column_stack([np.ones(m), X[:, selected]])
        eta, wssr, rank = wls(Z, y, w)
        if rank == Z.shape[1]:
            break
        # collinear refit: drop the most recently added non-forced covariate
        drop = next(i for i in range(len(selected) - 1, -1, -1)
                    if selected[i] != forced)
        del selected[drop]
    df = m - Z.shape[1]
    s2 = wssr / df if df > 0 else 0.0
    cov = s2 * np.linalg.inv(Z.T @ (Z * w[:, None]))
    cov = 0.5 * (cov + cov.T)
    return ForwardModel(tuple(selected), eta, cov, float(np.sqrt(s2)), tuple(path), p)


def forward_predict_interval(model: ForwardModel, xbar_ns, N: int, n: int,
                             alpha: float) -> tuple[float, float, float, float]:
    """Gaussian prediction interval for the non-sampled mean of one area.

    Returns ``(yhat_ns, variance, lower, upper)`` with half-width
    ``q_{1-alpha/2} * sqrt(variance)``.
    """
    yhat = float(model.predict(xbar_ns)[0])
    var = float(model.prediction_variance(xbar_ns, [N - n])[0])
    half = stats.norm.ppf(1 - alpha / 2) * np.sqrt(var)
    return yhat, var, yhat - half, yhat + half


# --------------------------------------------------------------------------
# LASSO


@numba.njit(cache=True)
def _cd_sweep(Z, r, beta, lam, penalized, active_only):
    m, p = Z.shape
    delta = 0.0
    for j in range(p):
        old = beta[j]
        if active_only and old == 0.0:
            continue
        g = old
        for i in range(m):
            g += Z[i, j] * r[i] / m
        if penalized[j]:
            if g > lam:
                new = g - lam
            elif g < -lam:
                new = g + lam
            else:
                new = 0.0
        else:
            new = g
        if new != old:
            d = new - old
            for i in range(m):
                r[i] -= Z[i, j] * d
            beta[j] = new
            if abs(d) > delta:
                delta = abs(d)
    return delta


@numba.njit(cache=True)
def _cd(Z, y, beta, lam, penalized, tol, max_sweeps):
    """Cyclic coordinate descent for ||y - Z b||^2/(2m) + lam*sum|b_j|,
    columns of Z scaled so that sum(z^2)/m = 1. Updates ``beta`` in place;
    returns the number of sweeps.

    Full sweeps alternate with sweeps over the nonzero coefficients only;
    convergence is declared after a full sweep moves nothing by ``tol``.
    """
    r = y - Z @ beta
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if _cd_sweep(Z, r, beta, lam, penalized, False) < tol:
            return sweeps
        while sweeps < max_sweeps:
            sweeps += 1
            if _cd_sweep(Z, r, beta, lam, penalized, True) < tol:
                break
    return sweeps


@dataclass(frozen=True)
class Standardizer:
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> Standardizer:
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        return cls(center, scale)

    @property
    def active(self) -> np.ndarray:
        return self.scale > 1e-12 * np.maximum(1.0, np.abs(self.center))

    def transform(self, X) -> np.ndarray:
        act = self.active
        Z = np.zeros_like(X, dtype=float)
        Z[:, act] = (X[:, act] - self.center[act]) / self.scale[act]
        return Z


def lasso_objective(Z, y, beta, lam, penalized) -> float:
    r = y - Z @ beta
    return float(r @ r / (2 * len(y)) + lam * np.sum(np.abs(beta[penalized])))


def lambda_max(Z, yc, penalized) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    m = len(yc)
    r = yc
    if np.any(~penalized):
        Zf = Z[:, ~penalized]
        coef, *_ = np.linalg.lstsq(Zf, yc, rcond=None)
        r = yc - Zf @ coef
    if not np.any(penalized):
        return 0.0
    return float(np.max(np.abs(Z[:, penalized].T @ r)) / m)


def lasso_path(Z, yc, lambdas, penalized, tol=1e-7, max_sweeps=100_000) -> np.ndarray:
    """Coefficients ``(len(lambdas), p)`` on the standardized scale, warm
    started along ``lambdas`` (which should be decreasing)."""
    Z = np.ascontiguousarray(Z, dtype=float)
    beta = np.zeros(Z.shape[1])
    out = np.empty((len(lambdas), Z.shape[1]))
    pen = np.asarray(penalized, dtype=np.bool_)
    for k, lam in enumerate(lambdas):
        _cd(Z, np.asarray(yc, dtype=float), beta, float(lam), pen, tol, max_sweeps)
        out[k] = beta
    return out


def lasso_solve(X, y, lam: float, forced: int | None = None,
                standardize: bool = True, tol: float = 1e-7):
    """LASSO at one penalty. Returns ``(intercept, beta)`` on the original scale.

    With ``standardize=False`` the columns are only centered and must already
    satisfy ``sum(x^2)/m = 1`` for the penalty to mean what it says.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    st = Standardizer.fit(X) if standardize else Standardizer(
        X.mean(axis=0), np.ones(X.shape[1]))
    Z = st.transform(X)
    pen = np.ones(X.shape[1], dtype=bool)
    if forced is not None:
        pen[forced] = False
    ybar = y.mean()
    b = lasso_path(Z, y - ybar, [lam], pen, tol)[0]
    beta = np.where(st.active, b / np.where(st.active, st.scale, 1.0), 0.0)
    return float(ybar - beta @ st.center), beta


@dataclass(frozen=True)
class LassoModel:
    beta_hat: np.ndarray
    intercept: float
    lambda_star: float
    center: np.ndarray
    scale: np.ndarray
    cv_curve: tuple[tuple[float, float], ...] = field(repr=False)
    forced: int | None = None

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.beta_hat != 0.0))

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.beta_hat):
            raise ValueError(f"expected {len(self.beta_hat)} covariates, got {X.shape[1]}")
        return self.intercept + X @ self.beta_hat


def _path_fit(X, y, lambdas, forced, tol=1e-7):
    st = Standardizer.fit(X)
    Z = st.transform(X)
    pen = np.ones(X.shape[1], dtype=bool)
    if forced is not None:
        pen[forced] = False
    ybar = y.mean()
    B = lasso_path(Z, y - ybar, lambdas, pen, tol)
    scale = np.where(st.active, st.scale, 1.0)
    beta = np.where(st.active, B / scale, 0.0)
    intercept = ybar - beta @ st.center
    return intercept, beta, st


def lasso_fit(X, y, grid_size: int = 100, folds: int = 10, seed: int = 0,
              forced: int | None = None, lambda_min_ratio: float | None = None,
              thresh: float = 1e-7) -> LassoModel:
    """LASSO with the penalty chosen by area-level k-fold cross-validation.

    The grid is log-spaced from ``lambda_max`` down to
    ``lambda_min_ratio * lambda_max`` (default 0.01 when ``m < p``, else
    1e-4); the penalty with the smallest mean held-out squared error is
    refitted on all rows. Coordinate descent stops once no squared
    coefficient change exceeds ``thresh * var(y)``, as in glmnet.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, p = X.shape
    if m < folds:
        raise ValueError(f"LASSO CV needs at least {folds} rows, got {m}")
    if lambda_min_ratio is None:
        lambda_min_ratio = 0.01 if m < p else 1e-4
    tol = float(np.sqrt(thresh * np.var(y))) or thresh
    st = Standardizer.fit(X)
    pen = np.ones(p, dtype=bool)
    if forced is not None:
        pen[forced] = False
    lmax = lambda_max(st.transform(X), y - y.mean(), pen)
    if lmax <= 0:
        lambdas = np.zeros(1)
    else:
        lambdas = np.geomspace(lmax, lambda_min_ratio * lmax, grid_size)
    g = rng.stream(seed, rng.LASSO_CV)
    fold_of = np.empty(m, dtype=int)
    fold_of[g.permutation(m)] = np.arange(m) % folds
    err = np.zeros(len(lambdas))
    for k in range(folds):
        tr, te = fold_of != k, fold_of == k
        icpt, beta, _ = _path_fit(X[tr], y[tr], lambdas, forced, tol)
        pred = icpt[:, None] + beta @ X[te].T
        err += np.sum((pred - y[te]) ** 2, axis=1)
    err /= m
    best = int(np.argmin(err))
    icpt, beta, st = _path_fit(X, y, lambdas[: best + 1], forced, tol)
    return LassoModel(beta[-1], float(icpt[-1]), float(lambdas[best]),
                      st.center, st.scale,
                      tuple(zip(lambdas.tolist(), err.tolist())), forced)


def lasso_predict(model: LassoModel, xbar_ns) -> np.ndarray:
    return model.predict(xbar_ns)
