"""Penalized IRLS for logistic and log-link count regressions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, xlogy

from ..errors import IrlsDiverged, SeparationDetected

DEFAULT_LAMBDA_GRID = tuple(10.0 ** np.arange(-4, 5))
MAX_ETA = 30.0


@dataclass
class GLMFit:
    coef: np.ndarray
    family: str
    lambdas: tuple[float, ...] = ()
    deviance: float = float("nan")
    iterations: int = 0
    edf: float = float("nan")
    gcv: float = float("nan")
    gcv_scores: dict = field(default_factory=dict)
    eps: float = 1e-6

    def linear_predictor(self, X):
        return np.clip(X @ self.coef, -MAX_ETA, MAX_ETA)

    def predict(self, X):
        eta = self.linear_predictor(X)
        if self.family == "logistic":
            return np.clip(expit(eta), self.eps, 1 - self.eps)
        return np.exp(eta)


def _deviance(family, y, mu, w):
    if family == "logistic":
        return 2 * np.sum(w * (xlogy(y, y / mu) + xlogy(1 - y, (1 - y) / (1 - mu))))
    return 2 * np.sum(w * (xlogy(y, y / mu) - (y - mu)))


def _mean(family, eta):
    eta = np.clip(eta, -MAX_ETA, MAX_ETA)
    if family == "logistic":
        return np.clip(expit(eta), 1e-12, 1 - 1e-12)
    return np.exp(eta)


def _penalty_matrix(width, blocks, lambdas):
    S = np.zeros((width, width))
    for (sl, Sj), lam in zip(blocks, lambdas):
        S[sl, sl] += lam * Sj
    return S


def _irls(X, y, w, family, S, beta0=None, max_iter=100, tol=1e-8):
    n, k = X.shape
    if beta0 is None:
        if family == "logistic":
            mu = (y + 0.5) / 2
            eta = logit(mu)
        else:
            mu = (y + max(np.average(y, weights=w), 1e-3)) / 2
            eta = np.log(mu)
        beta = None
    else:
        beta = beta0
        eta = X @ beta
        mu = _mean(family, eta)
    pdev_old = np.inf if beta is None else _deviance(family, y, mu, w) + beta @ S @ beta
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        var = mu * (1 - mu) if family == "logistic" else mu
        var = np.maximum(var, 1e-12)
        z = eta + (y - mu) / var
        ww = w * var
        XtW = X.T * ww
        H = XtW @ X + S
        try:
            beta_new = np.linalg.solve(H, XtW @ z)
        except np.linalg.LinAlgError:
            beta_new = np.linalg.lstsq(H, XtW @ z, rcond=None)[0]
        # step halving on the penalized deviance
        for _ in range(30):
            eta_new = X @ beta_new
            mu_new = _mean(family, eta_new)
            pdev = _deviance(family, y, mu_new, w) + beta_new @ S @ beta_new
            if np.isfinite(pdev) and (pdev <= pdev_old + 1e-12 * (1 + abs(pdev_old)) or beta is None):
                break
            beta_new = (beta_new + beta) / 2
        else:
            raise IrlsDiverged("penalized deviance failed to decrease under step halving")
        if not np.all(np.isfinite(beta_new)):
            raise IrlsDiverged("IRLS produced non-finite coefficients")
        change = abs(pdev - pdev_old) / (abs(pdev) + 0.1)
        beta, eta, mu, pdev_old = beta_new, eta_new, mu_new, pdev
        if change < tol:
            converged = True
            break
    if not converged:
        raise IrlsDiverged(f"IRLS did not converge in {max_iter} iterations")
    # polishing steps sharpen the coefficients beyond the deviance criterion
    for _ in range(2):
        var = np.maximum(mu * (1 - mu) if family == "logistic" else mu, 1e-12)
        z = eta + (y - mu) / var
        XtW = X.T * (w * var)
        try:
            cand = np.linalg.solve(XtW @ X + S, XtW @ z)
        except np.linalg.LinAlgError:
            break
        eta_c = X @ cand
        mu_c = _mean(family, eta_c)
        pdev_c = _deviance(family, y, mu_c, w) + cand @ S @ cand
        if not (np.isfinite(pdev_c) and pdev_c <= pdev_old + 1e-12 * (1 + abs(pdev_old))):
            break
        beta, eta, mu, pdev_old = cand, eta_c, mu_c, pdev_c
    var = np.maximum(mu * (1 - mu) if family == "logistic" else mu, 1e-12)
    XtWX = (X.T * (w * var)) @ X
    try:
        edf = float(np.trace(np.linalg.solve(XtWX + S, XtWX)))
    except np.linalg.LinAlgError:
        edf = float(k)
    dev = _deviance(family, y, mu, w)
    return beta, dev, edf, it


def _gcv(dev, edf, n):
    denom = (n - edf) ** 2
    return n * dev / denom if denom > 0 else np.inf


def _intercept_column(X):
    for j in range(X.shape[1]):
        if np.all(X[:, j] == 1.0):
            return j
    return None


def fit_penalized_glm(X, y, weights=None, family="logistic", penalty=(),
                      lambda_grid=DEFAULT_LAMBDA_GRID, eps=1e-6, max_iter=100, tol=1e-8,
                      check_separation=True):
    """Fit a penalized GLM, selecting one smoothing parameter per block by GCV.

    Parameters
    ----------
    X : (n, k) design matrix.
    y : responses; binary for ``family='logistic'``, nonnegative otherwise.
    weights : prior weights; rescaled to mean one so only their ratios matter.
    family : ``'logistic'`` or ``'poisson'`` (log link, quasi-count).
    penalty : sequence of ``(column_slice, S)`` blocks.
    lambda_grid : candidate values for each block's smoothing parameter.
    eps : clip bound applied to logistic fitted probabilities.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    w = w / w.mean()
    if family not in ("logistic", "poisson"):
        raise ValueError(f"unknown family '{family}'")
    if family == "logistic" and np.any((y != 0) & (y != 1)):
        raise ValueError("logistic responses must be 0/1")
    if family == "poisson" and np.any(y < 0):
        raise ValueError("count responses must be nonnegative")

    blocks = list(penalty)
    active = w > 0
    ya = y[active]
    if family == "logistic" and (np.all(ya == 0) or np.all(ya == 1)):
        j = _intercept_column(X)
        if j is None:
            raise SeparationDetected("constant binary response without an intercept column")
        coef = np.zeros(k)
        coef[j] = logit(eps) if np.all(ya == 0) else logit(1 - eps)
        return GLMFit(coef, family, tuple(0.0 for _ in blocks), 0.0, 0, 1.0, eps=eps)
    if family == "poisson" and np.all(ya == 0):
        raise ValueError("all-zero counts have no finite log-link fit")

    # columns that vanish on the fitted rows are pinned at zero
    ridge = np.diag(np.where(np.any(X[active] != 0, axis=0), 0.0, 1e-8))
    if not blocks:
        beta, dev, edf, it = _irls(X, y, w, family, ridge, None, max_iter, tol)
        fit = GLMFit(beta, family, (), dev, it, edf, _gcv(dev, edf, n), eps=eps)
    else:
        grid = tuple(float(g) for g in lambda_grid)
        scores = {}
        cache = {}

        def evaluate(lams):
            if lams not in cache:
                S = _penalty_matrix(k, blocks, lams) + ridge
                warm = min(cache.values(), key=lambda r: r[4])[0] if cache else None
                try:
                    res = _irls(X, y, w, family, S, warm, max_iter, tol)
                except IrlsDiverged:
                    res = _irls(X, y, w, family, S, None, max_iter, tol)
                beta, dev, edf, it = res
                score = _gcv(dev, edf, n)
                cache[lams] = (beta, dev, edf, it, score)
                scores[lams] = score
            return cache[lams][4]

        if len(blocks) == 1:
            for lam in grid:
                evaluate((lam,))
        elif len(grid) ** len(blocks) <= 81:
            for lams in itertools.product(grid, repeat=len(blocks)):
                evaluate(lams)
        else:
            # coordinate-wise grid search
            current = [grid[len(grid) // 2]] * len(blocks)
            for _ in range(3):
                changed = False
                for b in range(len(blocks)):
                    best = min(grid, key=lambda g: evaluate(tuple(current[:b] + [g] + current[b + 1:])))
                    if best != current[b]:
                        current[b] = best
                        changed = True
                if not changed:
                    break
        best = min(scores, key=lambda key: (scores[key], key))
        beta, dev, edf, it, score = cache[best]
        fit = GLMFit(beta, family, best, dev, it, edf, score, dict(scores), eps=eps)

    if family == "logistic" and check_separation:
        p = fit.predict(X[active])
        pinned = np.mean((p <= eps) | (p >= 1 - eps))
        if pinned > 0.5:
            raise SeparationDetected(f"{pinned:.0%} of fitted probabilities sit at the clip bounds")
    return fit
