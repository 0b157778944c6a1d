"""Newton root finding for estimating equations and sandwich covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoConvergence, SingularBread


@dataclass
class SolverResult:
    theta: np.ndarray
    iterations: int
    norm: float
    converged: bool
    restarts: int = 0


def numeric_jacobian(fun, theta, f0=None, rel_step=1e-6):
    """Forward-difference Jacobian with step ``rel_step * (1 + |theta_j|)``."""
    theta = np.asarray(theta, dtype=float)
    if f0 is None:
        f0 = np.asarray(fun(theta), dtype=float)
    J = np.empty((len(f0), len(theta)))
    for j in range(len(theta)):
        h = rel_step * (1 + abs(theta[j]))
        tp = theta.copy()
        tp[j] += h
        J[:, j] = (np.asarray(fun(tp), dtype=float) - f0) / h
    return J


def central_jacobian(fun, theta, step=1e-6):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += step
        tm[j] -= step
        cols.append((np.asarray(fun(tp)) - np.asarray(fun(tm))) / (2 * step))
    return np.column_stack(cols)


def _newton(fun, theta, tol, max_iter, max_halving):
    f = np.asarray(fun(theta), dtype=float)
    norm = np.max(np.abs(f))
    for it in range(1, max_iter + 1):
        if not np.isfinite(norm):
            return theta, it, norm, False
        if norm <= tol * (1 + np.max(np.abs(theta))):
            theta, norm = _polish(fun, theta, f, norm)
            return theta, it - 1, norm, True
        J = numeric_jacobian(fun, theta, f)
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, f, rcond=None)[0]
        if not np.all(np.isfinite(step)) or not np.any(step):
            return theta, it, norm, False
        scale = 1.0
        for _ in range(max_halving + 1):
            cand = theta - scale * step
            fc = np.asarray(fun(cand), dtype=float)
            nc = np.max(np.abs(fc))
            if np.isfinite(nc) and nc < norm:
                break
            scale /= 2
        else:
            return theta, it, norm, False
        theta, f, norm = cand, fc, nc
    converged = norm <= tol * (1 + np.max(np.abs(theta)))
    if converged:
        theta, norm = _polish(fun, theta, f, norm)
    return theta, max_iter, norm, converged


def _polish(fun, theta, f, norm, steps=3):
    # The stopping rule bounds the score, not the parameter error, and a
    # forward-difference Jacobian leaves a small bias in each step. A few
    # extra full steps, kept only while the score shrinks, remove both.
    for _ in range(steps):
        if norm == 0:
            break
        try:
            step = np.linalg.solve(numeric_jacobian(fun, theta, f), f)
        except np.linalg.LinAlgError:
            break
        cand = theta - step
        fc = np.asarray(fun(cand), dtype=float)
        nc = np.max(np.abs(fc))
        if not (np.isfinite(nc) and nc < norm):
            break
        theta, f, norm = cand, fc, nc
    return theta, norm


def solve_score(fun, init, tol=1e-8, max_iter=100, max_halving=20, n_restarts=5, seed=0):
    """Find a root of ``fun`` by damped Newton iteration.

    Converged when ``max|fun(theta)| <= tol * (1 + max|theta|)``. If the
    start fails, up to ``n_restarts`` deterministic perturbed starts are
    tried before :class:`NoConvergence` is raised.
    """
    init = np.atleast_1d(np.asarray(init, dtype=float))
    theta, it, norm, ok = _newton(fun, init.copy(), tol, max_iter, max_halving)
    if ok:
        return SolverResult(theta, it, float(norm), True)
    best = (norm, theta)
    rng = np.random.default_rng(seed)
    for r in range(1, n_restarts + 1):
        start = init + rng.normal(scale=0.25 * (1 + np.abs(init)), size=init.shape)
        theta_r, it_r, norm_r, ok = _newton(fun, start, tol, max_iter, max_halving)
        if ok:
            return SolverResult(theta_r, it_r, float(norm_r), True, restarts=r)
        if np.isfinite(norm_r) and not norm_r >= best[0]:
            best = (norm_r, theta_r)
    raise NoConvergence(
        f"score solver failed after {n_restarts} restarts; final norm {best[0]:.3e} "
        f"at {np.array2string(best[1], precision=6)}", theta=best[1], norm=float(best[0]))


def sandwich_cov(terms_fun, theta, cluster=None, jacobian=None, n_total=None):
    """Sandwich covariance ``B Sigma B^T / N`` from per-record score terms.

    ``terms_fun(theta)`` returns an ``(N, d)`` array of contributions. The
    meat treats records as a martingale-difference array unless ``cluster``
    labels are given, in which case contributions are summed per cluster
    before taking outer products.
    """
    theta = np.asarray(theta, dtype=float)
    terms = np.asarray(terms_fun(theta), dtype=float)
    N = n_total or terms.shape[0]
    if jacobian is None:
        jacobian = numeric_jacobian(lambda th: terms_fun(th).sum(axis=0) / N, theta,
                                    terms.sum(axis=0) / N)
    try:
        if not np.all(np.isfinite(jacobian)) or np.linalg.cond(jacobian) > 1e12:
            raise np.linalg.LinAlgError
        bread = np.linalg.inv(jacobian)
    except np.linalg.LinAlgError as exc:
        raise SingularBread("score Jacobian is singular at the solution") from exc
    if cluster is None:
        meat = terms.T @ terms / N
    else:
        cl = np.asarray(cluster)
        _, codes = np.unique(cl, return_inverse=True)
        sums = np.zeros((codes.max() + 1, terms.shape[1]))
        np.add.at(sums, codes, terms)
        meat = sums.T @ sums / N
    cov = bread @ meat @ bread.T / N
    cov = (cov + cov.T) / 2
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-10 * max(1.0, eig.max()):
        raise SingularBread(f"sandwich covariance is not positive semidefinite (min eigenvalue {eig.min():.3e})")
    return cov, jacobian
