"""Horseshoe shrinkage regression fitted by Gibbs sampling.

Model for the sampled areal means::

    ybar_c ~ N(b0 + x_c' beta, sigma^2 / n_c)
    beta_j ~ N(0, lambda_j^2 tau^2),   lambda_j, tau ~ HC(0, 1)
    b0 ~ N(0, 100^2),   sigma^2 ~ IG(0.01, 0.01)

Covariates are standardized before sampling and coefficients are reported
on the original scale. Each half-Cauchy scale is written as two inverse-gamma
layers, ``lambda^2 | nu ~ IG(1/2, 1/nu)`` and ``nu ~ IG(1/2, 1)``, so every
full conditional is a standard distribution:

* ``(b0, beta)``: Gaussian with precision ``X'WX / sigma^2 + D^-1``, W = diag(n)
* ``sigma^2``: IG(a + m/2, b + sum n_c r_c^2 / 2)
* ``lambda_j^2``: IG(1, 1/nu_j + beta_j^2 / (2 tau^2)),  ``nu_j``: IG(1, 1 + 1/lambda_j^2)
* ``tau^2``: IG((q + 1)/2, 1/xi + sum beta_j^2 / (2 lambda_j^2)),  ``xi``: IG(1, 1 + 1/tau^2)

with ``q`` shrunk coefficients. A ``forced`` covariate gets a fixed N(0, 100^2)
prior instead of the horseshoe.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import rng

WIDE_SD = 100.0
SIGMA2_A = 0.01
SIGMA2_B = 0.01


@dataclass(frozen=True)
class HsConfig:
    chains: int = 2
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 1
    seed: int = 0
    fixed_scales: float | None = None  # hold tau = lambda_j at this value

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")

    @classmethod
    def gama(cls, seed: int = 0) -> HsConfig:
        """Long-run preset: 2 x 100,000 iterations, 50,000 burn-in, thin 15."""
        return cls(2, 100_000, 50_000, 15, seed)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Retained draws pooled across chains (chain-major order)."""

    beta: np.ndarray        # (L, p)
    intercept: np.ndarray   # (L,)
    sigma: np.ndarray       # (L,)
    tau: np.ndarray         # (L,)
    lam: np.ndarray         # (L, p); NaN for unshrunk covariates
    chains: int
    rhat: dict
    ess: dict

    @property
    def L(self) -> int:
        return len(self.sigma)

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    def by_chain(self, a: np.ndarray) -> np.ndarray:
        return a.reshape(self.chains, -1, *a.shape[1:])

    def mean_prediction(self, X) -> np.ndarray:
        """Posterior draws of ``b0 + x' beta``, shape ``(L, n_rows)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercept[:, None] + self.beta @ X.T

    def max_rhat(self) -> float:
        vals = [np.nanmax(v) for v in self.rhat.values() if np.size(v)]
        return float(max(vals)) if vals else float("nan")

    def to_csv(self, path) -> None:
        p = self.p
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw", "intercept", "sigma", "tau",
                        *[f"beta_{j}" for j in range(p)],
                        *[f"lambda_{j}" for j in range(p)]])
            per = self.L // self.chains
            for l in range(self.L):
                w.writerow([l // per, l % per, repr(float(self.intercept[l])),
                            repr(float(self.sigma[l])), repr(float(self.tau[l])),
                            *[repr(float(v)) for v in self.beta[l]],
                            *[repr(float(v)) for v in self.lam[l]]])


def _inv_gamma(g: np.random.Generator, shape, scale):
    return scale / g.gamma(shape, 1.0, size=np.shape(scale) or None)


def _chain(Z, y, w, shrink, cfg: HsConfig, g: np.random.Generator):
    m, k = Z.shape           # column 0 is the intercept
    q = int(shrink.sum())
    ZtW = Z.T * w
    ZtWZ = ZtW @ Z
    ZtWy = ZtW @ y
    prior_var = np.full(k, WIDE_SD ** 2)
    fixed = cfg.fixed_scales
    lam2 = np.ones(q) if fixed is None else np.full(q, fixed ** 2)
    tau2 = 1.0 if fixed is None else fixed ** 2
    nu = np.ones(q)
    xi = 1.0
    resid_var = np.sum(w * (y - np.average(y, weights=w)) ** 2) / m
    sigma2 = max(resid_var, 1e-8)
    keep = range(cfg.burn_in, cfg.iterations, cfg.thin)
    out_b = np.empty((len(keep), k))
    out_s = np.empty(len(keep))
    out_t = np.empty(len(keep))
    out_l = np.empty((len(keep), q))
    j = 0
    for it in range(cfg.iterations):
        prior_var[shrink] = lam2 * tau2
        prec = ZtWZ / sigma2 + np.diag(1.0 / prior_var)
        try:
            U = linalg.cholesky(prec, lower=False, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SamplerError(
                f"iteration {it}: posterior precision not positive definite "
                f"(sigma^2={sigma2:.3g}, tau^2={tau2:.3g})") from exc
        mean = linalg.cho_solve((U, False), ZtWy / sigma2)
        b = mean + linalg.solve_triangular(U, g.standard_normal(k))
        r = y - Z @ b
        sigma2 = _inv_gamma(g, SIGMA2_A + 0.5 * m, SIGMA2_B + 0.5 * np.sum(w * r * r))
        if not np.isfinite(sigma2) or not np.all(np.isfinite(b)):
            raise SamplerError(f"iteration {it}: non-finite draw (overflow)")
        if fixed is None and q:
            bs2 = b[shrink] ** 2
            lam2 = _inv_gamma(g, 1.0, 1.0 / nu + bs2 / (2.0 * tau2))
            nu = _inv_gamma(g, 1.0, 1.0 + 1.0 / lam2)
            tau2 = _inv_gamma(g, 0.5 * (q + 1), 1.0 / xi + np.sum(bs2 / lam2) / 2.0)
            xi = _inv_gamma(g, 1.0, 1.0 + 1.0 / tau2)
            # floor keeps the precision matrix finite under extreme shrinkage
            lam2 = np.maximum(lam2, 1e-300)
            tau2 = max(tau2, 1e-300)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            out_b[j] = b
            out_s[j] = np.sqrt(sigma2)
            out_t[j] = np.sqrt(tau2)
            out_l[j] = np.sqrt(lam2)
            j += 1
    return out_b, out_s, out_t, out_l


def split_rhat(draws: np.ndarray) -> np.ndarray:
    """Split-R-hat of ``draws`` shaped ``(chains, n, ...)``."""
    c, n = draws.shape[:2]
    half = n // 2
    if half < 2:
        return np.full(draws.shape[2:], np.nan)
    parts = np.concatenate([draws[:, :half], draws[:, n - half:]], axis=0)
    means = parts.mean(axis=1)
    within = parts.var(axis=1, ddof=1).mean(axis=0)
    between = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * within + between / half
    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = np.sqrt(var_plus / within)
    return np.where(within > 0, rhat, 1.0)


def effective_sample_size(draws: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial positive sequence truncation."""
    c, n = draws.shape[:2]
    flat = draws.reshape(c, n, -1)
    out = np.empty(flat.shape[2])
    for k in range(flat.shape[2]):
        x = flat[:, :, k] - flat[:, :, k].mean(axis=1, keepdims=True)
        var = x.var(axis=1).mean()
        if var == 0:
            out[k] = c * n
            continue
        f = np.fft.rfft(x, n=2 * n, axis=1)
        acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n].mean(axis=0) / n
        rho = acov / acov[0]
        s = 0.0
        t = 1
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            s += pair
            t += 2
        out[k] = c * n / (1.0 + 2.0 * s)
    return out.reshape(draws.shape[2:])


def hs_fit(X, y, n, config: HsConfig = HsConfig(),
           forced: int | None = None) -> PosteriorSamples:
    """Run ``config.chains`` Gibbs chains and pool the retained draws."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(n, dtype=float)
    m, p = X.shape
    if m < 3:
        raise ValueError("horseshoe fit needs at least 3 training rows")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    scale = np.where(active, scale, 1.0)
    cols = np.flatnonzero(active)
    Z = np.column_stack([np.ones(m), (X[:, cols] - center[cols]) / scale[cols]])
    shrink = np.ones(Z.shape[1], dtype=bool)
    shrink[0] = False
    if forced is not None and active[forced]:
        shrink[1 + int(np.searchsorted(cols, forced))] = False
    ymean = np.average(y, weights=w)
    per_chain = []
    for ch in range(config.chains):
        g = rng.stream(config.seed, rng.MCMC, ch)
        per_chain.append(_chain(Z, y - ymean, w, shrink, config, g))
    b = np.concatenate([c[0] for c in per_chain])
    L = len(b)
    beta = np.zeros((L, p))
    beta[:, cols] = b[:, 1:] / scale[cols]
    intercept = ymean + b[:, 0] - beta @ center
    lam = np.full((L, p), np.nan)
    shrunk_cols = cols[shrink[1:]]
    lam[:, shrunk_cols] = np.concatenate([c[3] for c in per_chain])
    sigma = np.concatenate([c[1] for c in per_chain])
    tau = np.concatenate([c[2] for c in per_chain])
    C = config.chains

    def _diag(a):
        a = a.reshape(C, -1, *a.shape[1:])
        return split_rhat(a), effective_sample_size(a)

    rhat, ess = {}, {}
    for name, arr in (("beta", beta), ("intercept", intercept), ("sigma", sigma)):
        rhat[name], ess[name] = _diag(arr)
    return PosteriorSamples(beta, intercept, sigma, tau, lam, C, rhat, ess)


def hs_predictive(samples: PosteriorSamples, xbar_ns, n_nonsampled,
                  g: np.random.Generator) -> np.ndarray:
    """Posterior predictive draws of the non-sampled means, ``(L, n_rows)``.

    Draw ``l`` is ``N(x' beta_l + b0_l, sigma_l^2 / (N_c - n_c))``.
    """
    nn = np.atleast_1d(np.asarray(n_nonsampled, dtype=float))
    if np.any(nn <= 0):
        raise ValueError("predictive draws need N_c > n_c")
    mu = samples.mean_prediction(xbar_ns)
    sd = samples.sigma[:, None] / np.sqrt(nn)[None, :]
    return mu + sd * g.standard_normal(mu.shape)


def credible_interval(samples: PosteriorSamples, level: float = 0.95) -> np.ndarray:
    """Equal-tailed intervals for each coefficient, shape ``(p, 2)``."""
    if samples.L == 0:
        raise ValueError("no posterior draws")
    a = (1 - level) / 2
    return np.quantile(samples.beta, [a, 1 - a], axis=0).T


def hs_selected(samples: PosteriorSamples, level: float = 0.95) -> tuple[int, ...]:
    """Covariates whose equal-tailed credible interval excludes zero."""
    ci = credible_interval(samples, level)
    return tuple(int(j) for j in np.flatnonzero((ci[:, 0] > 0) | (ci[:, 1] < 0)))


def posterior_ranks(draws: np.ndarray, area_ids=None) -> tuple[np.ndarray, bool]:
    """Rank histograms from per-draw area estimates.

    Parameters
    ----------
    draws : (L, n_areas) array
        Estimate of every area at every retained draw.
    area_ids : sequence, optional
        Tie-break order; ties are ranked by ``area_ids`` (by position when
        omitted).

    Returns
    -------
    hist : (n_areas, n_areas) int array
        ``hist[a, r]`` counts draws in which area ``a`` has rank ``r + 1``
        (rank 1 is the smallest estimate).
    ties : bool
        Whether any draw contained tied estimates.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    L, A = draws.shape
    if L < 1 or A < 2:
        raise ValueError("need at least one draw and two areas")
    tiebreak = np.arange(A) if area_ids is None else np.argsort(
        np.argsort(np.asarray(area_ids), kind="stable"), kind="stable")
    hist = np.zeros((A, A), dtype=np.int64)
    ties = False
    for l in range(L):
        order = np.lexsort((tiebreak, draws[l]))
        if not ties and len(np.unique(draws[l])) < A:
            ties = True
        hist[order, np.arange(A)] += 1
    return hist, ties
