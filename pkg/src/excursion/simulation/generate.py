"""Synthetic panels for the four simulation scenarios and their true effects."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as _expit
from scipy.stats import norm

from ..errors import InvalidConfig, SingularInformation
from ..panel import PanelDataset

Z_LEVELS = np.array([0.0, 1.0, 2.0])
BASELINE_MU = np.array([2.2, 2.5, 2.4])
TS_CLIP = (0.05, 0.95)


def expit(x):
    """Logistic function, vectorized."""
    return _expit(x)


@dataclass(frozen=True)
class ScenarioConfig:
    """Size and randomization settings of one simulated study."""

    scenario: int = 1
    n: int = 100
    T: int = 30
    r: float = 1.0
    ts_alpha: float = 1.0
    ts_warmup: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise InvalidConfig(f"scenario must be 1, 2, 3 or 4, got {self.scenario}")
        if self.n < 1 or self.T < 1:
            raise InvalidConfig("n and T must both be at least 1")
        if not self.r > 0:
            raise InvalidConfig("dispersion r must be positive")
        if self.ts_alpha <= 0:
            raise InvalidConfig("ts_alpha must be positive")
        if self.scenario == 3 and self.T <= self.ts_warmup:
            raise InvalidConfig(f"scenario 3 needs T > ts_warmup ({self.ts_warmup})")

    @property
    def k_arms(self) -> int:
        return 2 if self.scenario == 4 else 1


def sample_zinb(pi, mu, r, rng):
    """Zero-inflated negative binomial draw ``Bernoulli(pi) * NB(mu, r)``.

    The negative binomial is a Poisson whose rate is Gamma with shape ``r``
    and mean ``mu``, so its variance is ``mu + mu**2 / r``.
    """
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    shape = np.broadcast_shapes(pi.shape, mu.shape)
    occur = rng.random(shape) < pi
    rate = rng.gamma(r, 1.0, size=shape) * (np.broadcast_to(mu, shape) / r)
    counts = rng.poisson(rate)
    return np.where(occur, counts, 0).astype(np.int64)


# ------------------------------------------------------------ outcome model

def outcome_params(scenario: int, z, a1, a2=0):
    """Zero-inflation probability ``pi`` and NB mean ``mu`` given Z and arms."""
    z = np.asarray(z, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    pi = np.exp(-0.4 * (z + 0.1) + 0.1 * z * a1 + 0.1 * z * a2)
    if scenario == 2:
        mu = np.exp(0.2 + 0.5 * z + a1 * (0.1 + 0.3 * z))
    else:
        base = BASELINE_MU[z.astype(int)]
        mu = base * np.exp(a1 * (0.1 + 0.3 * z) + a2 * (0.1 + 0.1 * z))
    return pi, mu


def true_effect(scenario: int, estimand: str = "marginal") -> np.ndarray:
    """Analytic excursion effect with Z uniform on {0, 1, 2}.

    The marginal value is the log ratio of the treated and untreated
    outcome means averaged over Z. The conditional value is the coefficient
    vector on ``(1, Z)`` per active arm.
    """
    if scenario not in (1, 2, 3, 4):
        raise InvalidConfig(f"unknown scenario {scenario}")
    if estimand == "conditional":
        if scenario == 4:
            return np.array([0.1, 0.4, 0.1, 0.2])
        return np.array([0.1, 0.4])
    if estimand != "marginal":
        raise ValueError("estimand must be 'marginal' or 'conditional'")

    def mean(a1, a2=0):
        pi, mu = outcome_params(scenario, Z_LEVELS, a1, a2)
        return float(np.mean(pi * mu))

    base = mean(0)
    if scenario == 4:
        return np.array([math.log(mean(1, 0) / base), math.log(mean(0, 1) / base)])
    return np.array([math.log(mean(1) / base)])


def monte_carlo_effect(scenario: int, n_draws: int, rng, r: float = 1.0):
    """Monte Carlo marginal effect and its delta-method standard error.

    Draws Z uniformly and outcomes under each forced arm, then returns
    ``(estimates, standard errors)``.
    """
    z = rng.integers(0, 3, size=n_draws).astype(float)
    arms = [(0, 0), (1, 0)] + ([(0, 1)] if scenario == 4 else [])
    means, ys = [], []
    for a1, a2 in arms:
        pi, mu = outcome_params(scenario, z, a1, a2)
        y = sample_zinb(pi, mu, r, rng).astype(float)
        ys.append(y)
        means.append(y.mean())
    est, se = [], []
    for k in range(1, len(arms)):
        est.append(math.log(means[k] / means[0]))
        # independent draws per arm: var(log m) ~ var(y) / (n m^2)
        v = ys[k].var() / (n_draws * means[k] ** 2) + ys[0].var() / (n_draws * means[0] ** 2)
        se.append(math.sqrt(v))
    return np.array(est), np.array(se)


# ------------------------------------------------------------ Thompson sampling

def ts_features(z, a):
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.column_stack([np.ones_like(z), z, a, a * z])


def thompson_probability(beta_hat, info, z, alpha: float = 1.0):
    """Probability that a Gaussian posterior draw favours treatment.

    With ``delta = f(1, z) - f(0, z) = (0, 0, 1, z)`` this is
    ``Phi(delta'beta / (alpha * sqrt(delta' info^-1 delta)))``, clipped to
    ``[0.05, 0.95]``. ``beta_hat`` and ``info`` may carry a leading batch
    axis matching ``z``. Raises :class:`SingularInformation` when any
    information matrix is not invertible.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    beta = np.asarray(beta_hat, dtype=float)
    info = np.asarray(info, dtype=float)
    if beta.ndim == 1:
        beta = np.broadcast_to(beta, (len(z), beta.shape[0]))
        info = np.broadcast_to(info, (len(z),) + info.shape)
    if not np.all(np.isfinite(info)) or np.any(np.linalg.cond(info) > 1e14):
        raise SingularInformation("Poisson information matrix is singular")
    delta = np.column_stack([np.zeros_like(z), np.zeros_like(z), np.ones_like(z), z])
    mean = np.einsum("ij,ij->i", delta, beta)
    var = np.einsum("ij,ij->i", delta, np.linalg.solve(info, delta[:, :, None])[:, :, 0])
    if np.any(var <= 0):
        raise SingularInformation("non-positive posterior variance of the treatment contrast")
    p = norm.cdf(mean / (alpha * np.sqrt(var)))
    return np.clip(p, *TS_CLIP)


def poisson_mle(X, y, init=None, max_iter=50, tol=1e-10):
    """Unpenalized Poisson regression by Newton's method.

    Returns ``(beta, information)``; raises :class:`SingularInformation`
    when the information is singular or the iteration fails.
    """
    d = X.shape[1]
    beta = np.zeros(d) if init is None else np.array(init, dtype=float)
    if init is None and y.mean() > 0:
        beta[0] = math.log(y.mean())
    for _ in range(max_iter):
        mu = np.exp(np.clip(X @ beta, -30, 30))
        info = X.T @ (X * mu[:, None])
        grad = X.T @ (y - mu)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation("Poisson information matrix is singular") from exc
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise SingularInformation("Poisson MLE diverged")
        if np.max(np.abs(step)) < tol * (1 + np.max(np.abs(beta))):
            break
    mu = np.exp(np.clip(X @ beta, -30, 30))
    return beta, X.T @ (X * mu[:, None])


def batched_poisson_mle(X, Y, init=None, max_iter=30, tol=1e-8):
    """Independent Poisson MLEs for a stack of designs ``X[i]`` and responses ``Y[i]``.

    Returns ``(beta, information, ok)`` where ``ok`` flags fits that
    converged with a finite, well-conditioned information matrix.
    """
    m, _, d = X.shape
    beta = np.zeros((m, d))
    mean = Y.mean(axis=1)
    beta[:, 0] = np.log(np.where(mean > 0, mean, 1.0))
    if init is not None:
        usable = np.all(np.isfinite(init), axis=1)
        beta[usable] = init[usable]
    done = np.zeros(m, dtype=bool)
    ridge = 1e-12 * np.eye(d)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if not len(act):
            break
        Xa, b = X[act], beta[act]
        mu = np.exp(np.clip(np.einsum("itj,ij->it", Xa, b), -30, 30))
        info = np.matmul((Xa * mu[:, :, None]).transpose(0, 2, 1), Xa)
        grad = np.einsum("itj,it->ij", Xa, Y[act] - mu)
        # the ridge keeps the batched solve defined; flagged fits are discarded
        step = np.linalg.solve(info + ridge, grad[:, :, None])[:, :, 0]
        b = b + step
        beta[act] = b
        done[act] = np.max(np.abs(step), axis=1) < tol * (1 + np.max(np.abs(b), axis=1))
    mu = np.exp(np.clip(np.einsum("itj,ij->it", X, beta), -30, 30))
    info = np.matmul((X * mu[:, :, None]).transpose(0, 2, 1), X)
    finite = np.all(np.isfinite(beta), axis=1) & np.all(np.isfinite(info), axis=(1, 2))
    cond = np.full(m, np.inf)
    cond[finite] = np.linalg.cond(info[finite])
    ok = done & finite & (cond < 1e12)
    return beta, info, ok


# ------------------------------------------------------------ generator

def gen_scenario(config: ScenarioConfig, rng, diagnostics: dict | None = None) -> PanelDataset:
    """Simulate one panel of ``n`` participants over ``T`` decision points.

    Availability is always 1 and the arm before the first decision point is
    taken as 0. Randomization probabilities are stored except in Scenario 2,
    which mimics an observational study. ``diagnostics`` (if given) receives
    the number of Thompson-sampling fallbacks to 0.5.
    """
    n, T, sc = config.n, config.T, config.scenario
    K = config.k_arms
    Z = np.empty((T, n))
    A = np.zeros((T, n), dtype=np.int64)
    Y = np.zeros((T, n), dtype=np.int64)
    P = np.empty((T, n, K))
    prev_treated = np.zeros(n)
    fallbacks = 0
    beta_ts = None
    for t in range(T):
        z = rng.integers(0, 3, size=n).astype(float)
        Z[t] = z
        if sc == 3:
            if t < config.ts_warmup:
                p = np.full(n, 0.5)
            else:
                zs, as_ = Z[:t].T, A[:t].T.astype(float)
                X = np.stack([np.ones_like(zs), zs, as_, as_ * zs], axis=2)
                beta_ts, info, ok = batched_poisson_mle(X, Y[:t].T.astype(float), beta_ts)
                p = np.full(n, 0.5)
                if ok.any():
                    p[ok] = thompson_probability(beta_ts[ok], info[ok], z[ok], config.ts_alpha)
                bad = int(np.sum(~ok))
                if bad:
                    warnings.warn(f"{bad} singular Thompson-sampling fits; using p = 0.5",
                                  RuntimeWarning, stacklevel=2)
                    fallbacks += bad
                    beta_ts[~ok] = np.nan
            P[t, :, 0] = p
        else:
            p = expit(-0.5 * prev_treated + 0.5 * z)
            P[t] = (0.5 * p)[:, None] if K == 2 else p[:, None]
        u = rng.random(n)
        if K == 1:
            a = (u < P[t, :, 0]).astype(np.int64)
        else:
            a = np.where(u < P[t, :, 0], 1, np.where(u < P[t, :, 0] + P[t, :, 1], 2, 0))
        A[t] = a
        pi, mu = outcome_params(sc, z, a == 1, a == 2)
        Y[t] = sample_zinb(pi, mu, config.r, rng)
        prev_treated = (a > 0).astype(float)
    if diagnostics is not None:
        diagnostics["ts_fallbacks"] = diagnostics.get("ts_fallbacks", 0) + fallbacks

    participant = np.repeat(np.arange(1, n + 1), T)
    t_idx = np.tile(np.arange(1, T + 1), n)
    rand_prob = None if sc == 2 else P.transpose(1, 0, 2).reshape(n * T, K)
    return PanelDataset(
        participant=participant, t=t_idx,
        availability=np.ones(n * T, dtype=np.int64),
        arm=A.T.ravel(), outcome=Y.T.ravel(),
        covariates={"Z": Z.T.ravel()},
        rand_prob=rand_prob, k_arms=K,
    )
