"""Log-link GEE with independence or exchangeable working correlation."""
from __future__ import annotations

import numpy as np

from ..errors import NoConvergence, SingularBread


def _cluster_sums(codes, n_clusters, values):
    out = np.zeros((n_clusters,) + values.shape[1:])
    np.add.at(out, codes, values)
    return out


def _exchangeable_parts(X, y, mu, codes, n_clusters, rho, sizes):
    """Return (sum_i D'V^-1 D, per-cluster D'V^-1 (y - mu)) up to the scale."""
    sq = np.sqrt(mu)
    Xt = X * sq[:, None]                 # D_i = diag(mu) X, A^{-1/2} D = diag(sqrt(mu)) X
    e = (y - mu) / sq
    c1 = 1.0 / (1.0 - rho)
    c2 = rho / (1.0 + (sizes - 1) * rho)                # per cluster
    sx = _cluster_sums(codes, n_clusters, Xt)           # (n_clusters, d)
    se = _cluster_sums(codes, n_clusters, e)            # (n_clusters,)
    info = c1 * (Xt.T @ Xt - (sx * c2[:, None]).T @ sx)
    u_lin = _cluster_sums(codes, n_clusters, Xt * e[:, None])
    U = c1 * (u_lin - sx * (c2 * se)[:, None])
    return info, U


def fit_log_gee(X, y, cluster, corr="independence", max_iter=100, tol=1e-10):
    """Solve sum_i D_i' V_i^-1 (y_i - mu_i) = 0 with mu = exp(X b), V ~ Poisson.

    Returns ``(coef, robust covariance, rho, iterations)``. The exchangeable
    correlation is re-estimated from Pearson residuals at every iteration.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _, codes = np.unique(np.asarray(cluster), return_inverse=True)
    n_clusters = codes.max() + 1
    sizes = np.bincount(codes, minlength=n_clusters).astype(float)
    N, d = X.shape
    if corr not in ("independence", "exchangeable"):
        raise ValueError(f"unknown working correlation '{corr}'")

    b = np.zeros(d)
    b[0] = np.log(max(y.mean(), 1e-8)) if np.allclose(X[:, 0], 1) else 0.0
    rho = 0.0
    converged = False
    it = 0
    for stage in ("independence", corr):
        for it in range(1, max_iter + 1):
            mu = np.exp(np.clip(X @ b, -50, 50))
            if stage == "exchangeable":
                e = (y - mu) / np.sqrt(mu)
                phi = np.sum(e ** 2) / max(N - d, 1)
                se = _cluster_sums(codes, n_clusters, e)
                pairs = np.sum((se ** 2 - _cluster_sums(codes, n_clusters, e ** 2)) / 2)
                n_pairs = np.sum(sizes * (sizes - 1) / 2) - d
                rho = float(pairs / (phi * n_pairs)) if n_pairs > 0 and phi > 0 else 0.0
                rho = float(np.clip(rho, -0.99 / max(sizes.max() - 1, 1), 0.99))
            info, U = _exchangeable_parts(X, y, mu, codes, n_clusters, rho, sizes)
            try:
                step = np.linalg.solve(info, U.sum(axis=0))
            except np.linalg.LinAlgError as exc:
                raise NoConvergence("singular GEE information matrix") from exc
            # damp very large steps in the first iterations
            big = np.max(np.abs(step))
            if big > 5:
                step *= 5 / big
            b = b + step
            if not np.all(np.isfinite(b)):
                raise NoConvergence("GEE iteration diverged")
            if np.max(np.abs(step)) < tol * (1 + np.max(np.abs(b))):
                converged = True
                break
        if not converged:
            raise NoConvergence(f"GEE did not converge in {max_iter} iterations")
        if corr == "independence":
            break
        converged = False

    mu = np.exp(np.clip(X @ b, -50, 50))
    info, U = _exchangeable_parts(X, y, mu, codes, n_clusters, rho, sizes)
    try:
        bread = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularBread("singular GEE information matrix") from exc
    cov = bread @ (U.T @ U) @ bread.T
    cov = (cov + cov.T) / 2
    return b, cov, rho, it
