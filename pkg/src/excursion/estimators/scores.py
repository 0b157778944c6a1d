"""Per-record estimating functions for the excursion-effect estimators.

Every ``*_terms`` function returns an ``(N, d)`` array whose column means form
the estimating equation; unavailable records contribute rows of zeros.
Effect parameters for K arms are stacked arm by arm, each block having one
entry per moderator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MissingNuisance
from .weights import weight_ktilde

MAX_EXP = 50.0


@dataclass(frozen=True)
class ScoreInputs:
    y: np.ndarray                 # (N,)
    avail: np.ndarray             # (N,) 0/1
    arm: np.ndarray               # (N,) 0..K
    dummies: np.ndarray           # (N, K)
    S: np.ndarray                 # (N, p) moderators S_t or f(H_t)
    G: np.ndarray | None = None   # (N, q) controls g(H_t)
    prob: np.ndarray | None = None     # (N, K) randomization / propensity
    p_tilde: np.ndarray | None = None  # (N, K) reference probabilities
    mu: np.ndarray | None = None       # (N, K+1) arm-conditional means

    @property
    def k_arms(self) -> int:
        return self.dummies.shape[1]

    @property
    def p(self) -> int:
        return self.S.shape[1]

    @property
    def q(self) -> int:
        return 0 if self.G is None else self.G.shape[1]

    @property
    def n_records(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class ScoreContext:
    """Per-record intermediate quantities at a given effect value."""

    U: np.ndarray
    W: np.ndarray
    Ktilde: np.ndarray | None
    h: np.ndarray | None
    residual: np.ndarray | None
    centered: np.ndarray


def _effects(inp: ScoreInputs, beta):
    beta = np.asarray(beta, dtype=float).reshape(inp.k_arms, inp.p)
    eff = np.clip(inp.S @ beta.T, -MAX_EXP, MAX_EXP)           # (N, K)
    treated = np.sum(inp.dummies * eff, axis=1)                  # A_t-weighted effect
    return eff, treated


def _weight(inp: ScoreInputs):
    if inp.prob is None:
        raise MissingNuisance("randomization probabilities are required for the weight W_t")
    pt, p = inp.p_tilde, inp.prob
    if inp.k_arms == 1:
        return np.where(inp.arm == 1, pt[:, 0] / p[:, 0], (1 - pt[:, 0]) / (1 - p[:, 0]))
    num0 = 1 - pt.sum(axis=1)
    den0 = 1 - p.sum(axis=1)
    idx = np.clip(inp.arm - 1, 0, None)
    rows = np.arange(inp.n_records)
    return np.where(inp.arm == 0, num0 / den0, pt[rows, idx] / p[rows, idx])


def _h_reference(inp: ScoreInputs, eff, probs):
    """h(H_t) = mu_0 (1 - sum p_k) + sum_k mu_k exp(-S beta_k) p_k."""
    mu = inp.mu
    out = mu[:, 1] * np.exp(-eff[:, 0]) * probs[:, 0]
    for k in range(1, inp.k_arms):
        out = out + mu[:, k + 1] * np.exp(-eff[:, k]) * probs[:, k]
    rest = 1 - probs[:, 0] if inp.k_arms == 1 else 1 - probs.sum(axis=1)
    return out + mu[:, 0] * rest


def _stack_arms(inp: ScoreInputs, scalar, centered):
    # (N,) x (N, K) x (N, p) -> (N, K*p), arm-major
    blocks = (scalar[:, None] * centered)[:, :, None] * inp.S[:, None, :]
    return blocks.reshape(inp.n_records, inp.k_arms * inp.p)


def score_context(inp: ScoreInputs, beta, estimator="EMEE-NonP") -> ScoreContext:
    eff, treated = _effects(inp, beta)
    U = inp.y * np.exp(-treated)
    if estimator.startswith("ECE"):
        W = np.ones(inp.n_records)
        Kt = weight_ktilde(eff[:, 0], inp.prob[:, 0])
        centered = inp.dummies - inp.prob
        h = _h_reference(inp, eff, inp.prob) if inp.mu is not None else None
    else:
        W = _weight(inp)
        Kt = None
        centered = inp.dummies - inp.p_tilde
        h = _h_reference(inp, eff, inp.p_tilde) if inp.mu is not None else None
    if estimator == "DR-EMEE-NonP":
        mu_a = inp.mu[np.arange(inp.n_records), inp.arm]
        residual = U - mu_a * np.exp(-treated)
    else:
        residual = None if h is None else U - h
    return ScoreContext(U, W, Kt, h, residual, centered)


def _require_mu(inp):
    if inp.mu is None:
        raise MissingNuisance("fitted arm-conditional means are required")


def emee_nonp_terms(inp: ScoreInputs, beta):
    _require_mu(inp)
    eff, treated = _effects(inp, beta)
    U = inp.y * np.exp(-treated)
    h = _h_reference(inp, eff, inp.p_tilde)
    W = _weight(inp)
    return _stack_arms(inp, inp.avail * W * (U - h), inp.dummies - inp.p_tilde)


def dr_emee_nonp_terms(inp: ScoreInputs, beta):
    _require_mu(inp)
    eff, treated = _effects(inp, beta)
    U = inp.y * np.exp(-treated)
    rows = np.arange(inp.n_records)
    mu_a = inp.mu[rows, inp.arm]
    W = _weight(inp)
    first = _stack_arms(inp, inp.avail * W * (U - mu_a * np.exp(-treated)), inp.dummies - inp.p_tilde)
    pt = inp.p_tilde
    if inp.k_arms == 1:
        aug = (inp.avail * pt[:, 0] * (1 - pt[:, 0])
               * (inp.mu[:, 1] * np.exp(-eff[:, 0]) - inp.mu[:, 0]))[:, None]
    else:
        h = _h_reference(inp, eff, pt)
        aug = inp.avail[:, None] * pt * (inp.mu[:, 1:] * np.exp(-eff) - h[:, None])
    second = (aug[:, :, None] * inp.S[:, None, :]).reshape(inp.n_records, -1)
    return first + second


def ece_nonp_terms(inp: ScoreInputs, phi):
    _require_mu(inp)
    if inp.k_arms != 1:
        raise ValueError("ECE-NonP is defined for a single active arm")
    if inp.prob is None:
        raise MissingNuisance("ECE-NonP requires randomization probabilities")
    eff, treated = _effects(inp, phi)
    p = inp.prob[:, 0]
    U = inp.y * np.exp(-treated)
    h = _h_reference(inp, eff, inp.prob)
    Kt = weight_ktilde(eff[:, 0], p)
    return (inp.avail * Kt * (U - h) * (inp.dummies[:, 0] - p))[:, None] * inp.S


def _split(inp, theta):
    theta = np.asarray(theta, dtype=float)
    return theta[:inp.q], theta[inp.q:]


def ece_terms(inp: ScoreInputs, theta):
    """Parametric conditional estimator; ``theta = (alpha, phi)``."""
    if inp.G is None:
        raise ValueError("ECE requires control features")
    if inp.k_arms != 1:
        raise ValueError("ECE is defined for a single active arm")
    if inp.prob is None:
        raise MissingNuisance("ECE requires randomization probabilities")
    alpha, phi = _split(inp, theta)
    eff, treated = _effects(inp, phi)
    p = inp.prob[:, 0]
    lin = np.clip(inp.G @ alpha + treated, -MAX_EXP, MAX_EXP)
    resid = np.exp(-treated) * (inp.y - np.exp(lin))
    scale = inp.avail * resid * weight_ktilde(eff[:, 0], p)
    return np.hstack([scale[:, None] * inp.G,
                      (scale * (inp.dummies[:, 0] - p))[:, None] * inp.S])


def emee_terms(inp: ScoreInputs, theta):
    """Parametric marginal estimator; ``theta = (alpha, beta_1, ..., beta_K)``."""
    if inp.G is None:
        raise ValueError("EMEE requires control features")
    alpha, beta = _split(inp, theta)
    eff, treated = _effects(inp, beta)
    lin = np.clip(inp.G @ alpha + treated, -MAX_EXP, MAX_EXP)
    resid = np.exp(-treated) * (inp.y - np.exp(lin))
    scale = inp.avail * resid * _weight(inp)
    return np.hstack([scale[:, None] * inp.G,
                      _stack_arms(inp, scale, inp.dummies - inp.p_tilde)])


TERMS = {
    "EMEE-NonP": emee_nonp_terms,
    "DR-EMEE-NonP": dr_emee_nonp_terms,
    "ECE-NonP": ece_nonp_terms,
    "ECE": ece_terms,
    "EMEE": emee_terms,
}

NONPARAMETRIC = ("EMEE-NonP", "DR-EMEE-NonP", "ECE-NonP")
PARAMETRIC = ("ECE", "EMEE")


def score(estimator: str, inp: ScoreInputs, theta, n_total=None):
    """Averaged estimating function ``(1/N) sum_i sum_t m_{i,t}``."""
    terms = TERMS[estimator](inp, theta)
    return terms.sum(axis=0) / (n_total or inp.n_records)


def score_emee_nonp(inp, beta):
    return score("EMEE-NonP", inp, beta)


def score_dr_emee_nonp(inp, beta):
    return score("DR-EMEE-NonP", inp, beta)


def score_ece_nonp(inp, phi):
    return score("ECE-NonP", inp, phi)


def score_ece(inp, theta):
    return score("ECE", inp, theta)


def score_emee(inp, theta):
    return score("EMEE", inp, theta)
