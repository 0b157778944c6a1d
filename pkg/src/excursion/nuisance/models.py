"""Hurdle outcome means and propensity models."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..errors import DegenerateArm, MissingKnownProbabilities, NoRecordsForArm
from ..panel import PanelDataset, evaluate_term
from .glm import DEFAULT_LAMBDA_GRID, GLMFit, fit_penalized_glm
from .splines import AdditiveDesign

FORMAT_VERSION = 1
PROPENSITY_MODES = ("known-prob", "sample-proportion", "logistic", "spline-logistic")


@dataclass(frozen=True)
class NuisanceConfig:
    """Feature sets and smoothing settings for the nuisance fits.

    ``propensity_mode='auto'`` uses the stored randomization probabilities
    when the panel carries them and the sample proportion otherwise.
    """

    features: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    n_basis: int = 10
    degree: int = 3
    penalty_order: int = 2
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    prob_clip: float = 1e-6
    propensity_mode: str = "auto"
    propensity_features: tuple[str, ...] = ("1",)
    eps_p: float = 0.01
    cross_fit: bool = False
    cross_fit_seed: int = 0
    lag_initial: dict = field(default_factory=dict)
    lag_default: float | None = 0.0

    def resolved_mode(self, data: PanelDataset) -> str:
        if self.propensity_mode == "auto":
            return "known-prob" if data.has_known_probs else "sample-proportion"
        if self.propensity_mode not in PROPENSITY_MODES:
            raise ValueError(f"unknown propensity mode '{self.propensity_mode}'")
        return self.propensity_mode


def feature_frame(data: PanelDataset, names: Sequence[str], cfg: NuisanceConfig | None = None):
    lag_initial = cfg.lag_initial if cfg else {}
    lag_default = cfg.lag_default if cfg else 0.0
    return {name: evaluate_term(data, name, lag_initial, lag_default) for name in names}


# ------------------------------------------------------------------ hurdle mean

@dataclass
class HurdleFit:
    """mu(h) = P(Y > 0 | h) * E[Y | Y > 0, h]."""

    arm: int
    design: AdditiveDesign
    zero_part: GLMFit | None
    positive_part: GLMFit | None

    def prob_positive(self, features, n):
        if self.zero_part is None:
            return np.zeros(n)
        return self.zero_part.predict(self.design.matrix(features, n))

    def positive_mean(self, features, n):
        if self.positive_part is None:
            return np.zeros(n)
        return self.positive_part.predict(self.design.matrix(features, n))

    def predict(self, features, n):
        if self.positive_part is None:
            return np.zeros(n)
        X = self.design.matrix(features, n)
        return self.zero_part.predict(X) * self.positive_part.predict(X)

    @property
    def lambdas(self):
        parts = [self.zero_part, self.positive_part]
        return tuple(p.lambdas if p is not None else () for p in parts)

    def to_dict(self):
        def part(p):
            if p is None:
                return None
            return {"family": p.family, "coef": p.coef.tolist(), "lambdas": list(p.lambdas),
                    "deviance": p.deviance, "iterations": p.iterations, "eps": p.eps}
        return {"arm": self.arm, "design": self.design.to_dict(),
                "zero_part": part(self.zero_part), "positive_part": part(self.positive_part)}

    @classmethod
    def from_dict(cls, d):
        def part(p):
            if p is None:
                return None
            return GLMFit(np.array(p["coef"]), p["family"], tuple(p["lambdas"]),
                          p["deviance"], p["iterations"], eps=p["eps"])
        return cls(d["arm"], AdditiveDesign.from_dict(d["design"]),
                   part(d["zero_part"]), part(d["positive_part"]))


def fit_hurdle_mean(data: PanelDataset, arm: int, cfg: NuisanceConfig | None = None,
                    features=None) -> HurdleFit:
    """Two-part fit of E[Y | A = arm, H, I = 1] on the available arm-``arm`` records."""
    cfg = cfg or NuisanceConfig()
    if features is None:
        features = feature_frame(data, cfg.features, cfg)
    sel = (data.availability == 1) & (data.arm == arm)
    if not np.any(sel):
        raise NoRecordsForArm(f"no available records with arm {arm}")
    sub = {k: v[sel] for k, v in features.items()}
    y = data.outcome[sel]
    design = AdditiveDesign.from_data(sub, list(cfg.features), cfg.categorical,
                                      cfg.n_basis, cfg.degree, cfg.penalty_order)
    X = design.matrix(sub, len(y))
    pos = y > 0
    if not np.any(pos):
        warnings.warn(f"arm {arm}: no positive outcomes; fitted mean is identically zero",
                      RuntimeWarning, stacklevel=2)
        return HurdleFit(arm, design, None, None)
    blocks = design.penalty_blocks()
    zero_part = fit_penalized_glm(X, pos.astype(float), family="logistic", penalty=blocks,
                                  lambda_grid=cfg.lambda_grid, eps=cfg.prob_clip,
                                  check_separation=False)
    positive_part = fit_penalized_glm(X[pos], y[pos], family="poisson", penalty=blocks,
                                      lambda_grid=cfg.lambda_grid)
    return HurdleFit(arm, design, zero_part, positive_part)


# ------------------------------------------------------------------ propensity

def clip_probs(p, eps):
    """Clip arm probabilities to [eps, 1 - eps] keeping P(arm 0) >= eps."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1 - eps)
    if p.ndim == 2 and p.shape[1] > 1:
        total = p.sum(axis=1, keepdims=True)
        scale = np.where(total > 1 - eps, (1 - eps) / total, 1.0)
        p = p * scale
    return p


@dataclass
class PropensityModel:
    mode: str
    k_arms: int
    eps: float = 0.01
    constants: np.ndarray | None = None       # sample-proportion
    coef: np.ndarray | None = None            # logistic: (q,) or (q, K)
    features: tuple[str, ...] = ()
    design: AdditiveDesign | None = None      # spline-logistic

    def predict(self, data: PanelDataset, features=None) -> np.ndarray:
        n = data.n_records
        if self.mode == "known-prob":
            if data.rand_prob is None:
                raise MissingKnownProbabilities("dataset carries no randomization probabilities")
            return np.asarray(data.rand_prob, dtype=float)
        if self.mode == "sample-proportion":
            return np.broadcast_to(self.constants, (n, self.k_arms)).copy()
        if features is None:
            names = self.features if self.design is None else _design_features(self.design)
            features = feature_frame(data, names)
        if self.mode == "spline-logistic":
            X = self.design.matrix(features, n)
            return clip_probs(expit(X @ self.coef), self.eps)[:, None]
        X = np.column_stack([features[f] for f in self.features])
        return self.predict_from_matrix(X)

    def predict_from_matrix(self, X):
        if self.k_arms == 1:
            raw = expit(np.clip(X @ self.coef, -30, 30))[:, None]
        else:
            eta = np.clip(X @ self.coef, -30, 30)
            eta = np.column_stack([np.zeros(len(X)), eta])
            eta -= eta.max(axis=1, keepdims=True)
            e = np.exp(eta)
            raw = (e / e.sum(axis=1, keepdims=True))[:, 1:]
        return clip_probs(raw, self.eps)

    def to_dict(self):
        return {
            "mode": self.mode, "k_arms": self.k_arms, "eps": self.eps,
            "constants": None if self.constants is None else np.asarray(self.constants).tolist(),
            "coef": None if self.coef is None else np.asarray(self.coef).tolist(),
            "features": list(self.features),
            "design": None if self.design is None else self.design.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], d["k_arms"], d["eps"],
                   None if d["constants"] is None else np.array(d["constants"]),
                   None if d["coef"] is None else np.array(d["coef"]),
                   tuple(d["features"]),
                   None if d["design"] is None else AdditiveDesign.from_dict(d["design"]))


def _design_features(design):
    names = []
    for term in design.terms:
        names.append(term.basis.feature if hasattr(term, "basis") else term.feature)
    return names


def _fit_multinomial(X, arm, k_arms, max_iter=100, tol=1e-10):
    """Unpenalized multinomial logistic regression by Newton's method."""
    n, q = X.shape
    Y = (arm[:, None] == np.arange(1, k_arms + 1)[None, :]).astype(float)
    B = np.zeros((q, k_arms))
    for _ in range(max_iter):
        eta = np.column_stack([np.zeros(n), X @ B])
        eta -= eta.max(axis=1, keepdims=True)
        P = np.exp(eta)
        P = (P / P.sum(axis=1, keepdims=True))[:, 1:]
        grad = (X.T @ (Y - P)).T.ravel()
        H = np.zeros((q * k_arms, q * k_arms))
        for a in range(k_arms):
            for b in range(k_arms):
                wab = P[:, a] * ((a == b) - P[:, b])
                H[a * q:(a + 1) * q, b * q:(b + 1) * q] = (X.T * wab) @ X
        step = np.linalg.solve(H, grad)
        B = B + step.reshape(k_arms, q).T
        if np.max(np.abs(step)) < tol:
            break
    return B


def fit_propensity(data: PanelDataset, mode: str = "sample-proportion",
                   features: Sequence[str] = ("1",), eps: float = 0.01,
                   cfg: NuisanceConfig | None = None) -> PropensityModel:
    """Fit P(A = k | H, I = 1) for k = 1..K."""
    K = data.k_arms
    avail = data.availability == 1
    counts = np.array([np.sum(avail & (data.arm == k)) for k in range(K + 1)])
    if mode == "known-prob":
        if data.rand_prob is None:
            raise MissingKnownProbabilities("known-prob mode requires stored randomization probabilities")
        return PropensityModel("known-prob", K, eps)
    missing = [k for k in range(K + 1) if counts[k] == 0]
    if missing:
        raise DegenerateArm(f"arm(s) {missing} never observed among available records")
    if mode == "sample-proportion":
        props = counts[1:] / counts.sum()
        return PropensityModel("sample-proportion", K, eps, constants=clip_probs(props[None, :], eps)[0])
    if mode == "logistic":
        features = tuple(features)
        if not features:
            raise ValueError("logistic propensity mode requires a feature list")
        frame = feature_frame(data, features, cfg)
        X = np.column_stack([frame[f] for f in features])[avail]
        if K == 1:
            fit = fit_penalized_glm(X, (data.arm[avail] == 1).astype(float), family="logistic",
                                    eps=eps, check_separation=False)
            coef = fit.coef
        else:
            coef = _fit_multinomial(X, data.arm[avail], K)
        return PropensityModel("logistic", K, eps, coef=coef, features=features)
    if mode == "spline-logistic":
        if K != 1:
            raise ValueError("spline-logistic propensity supports a single active arm")
        cfg = cfg or NuisanceConfig()
        names = [f for f in features if f != "1"]
        frame = feature_frame(data, names, cfg)
        sub = {k: v[avail] for k, v in frame.items()}
        design = AdditiveDesign.from_data(sub, names, cfg.categorical, cfg.n_basis,
                                          cfg.degree, cfg.penalty_order)
        X = design.matrix(sub, int(avail.sum()))
        fit = fit_penalized_glm(X, (data.arm[avail] == 1).astype(float), family="logistic",
                                penalty=design.penalty_blocks(), lambda_grid=cfg.lambda_grid,
                                eps=eps, check_separation=False)
        return PropensityModel("spline-logistic", K, eps, coef=fit.coef, design=design)
    raise ValueError(f"unknown propensity mode '{mode}'")


# --------------------------------------------------------------------- bundle

@dataclass
class NuisanceValues:
    """Per-record nuisance predictions: ``mu`` is (N, K+1), ``prob`` is (N, K)."""

    mu: np.ndarray
    prob: np.ndarray
    mode: str


@dataclass
class NuisanceFit:
    mu: list[HurdleFit]
    propensity: PropensityModel
    config: NuisanceConfig

    @property
    def mode(self) -> str:
        return self.propensity.mode

    def to_json(self) -> str:
        cfg = self.config
        return json.dumps({
            "format": "excursion-nuisance",
            "version": FORMAT_VERSION,
            "config": {"features": list(cfg.features), "categorical": list(cfg.categorical),
                       "n_basis": cfg.n_basis, "degree": cfg.degree,
                       "penalty_order": cfg.penalty_order, "lambda_grid": list(cfg.lambda_grid),
                       "prob_clip": cfg.prob_clip, "propensity_mode": cfg.propensity_mode,
                       "propensity_features": list(cfg.propensity_features), "eps_p": cfg.eps_p,
                       "lag_initial": dict(cfg.lag_initial), "lag_default": cfg.lag_default},
            "mu": [m.to_dict() for m in self.mu],
            "propensity": self.propensity.to_dict(),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "NuisanceFit":
        d = json.loads(text)
        if d.get("format") != "excursion-nuisance":
            raise ValueError("not a serialized nuisance fit")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported nuisance format version {d.get('version')}")
        c = d["config"]
        cfg = NuisanceConfig(
            features=tuple(c["features"]), categorical=tuple(c["categorical"]),
            n_basis=c["n_basis"], degree=c["degree"], penalty_order=c["penalty_order"],
            lambda_grid=tuple(c["lambda_grid"]), prob_clip=c["prob_clip"],
            propensity_mode=c["propensity_mode"], propensity_features=tuple(c["propensity_features"]),
            eps_p=c["eps_p"], lag_initial=c["lag_initial"], lag_default=c["lag_default"])
        return cls([HurdleFit.from_dict(m) for m in d["mu"]],
                   PropensityModel.from_dict(d["propensity"]), cfg)


def fit_nuisance(data: PanelDataset, cfg: NuisanceConfig | None = None,
                 features=None) -> NuisanceFit:
    cfg = cfg or NuisanceConfig()
    if features is None:
        features = feature_frame(data, cfg.features, cfg)
    mode = cfg.resolved_mode(data)
    prop = fit_propensity(data, mode, cfg.propensity_features, cfg.eps_p, cfg)
    mus = [fit_hurdle_mean(data, a, cfg, features) for a in range(data.k_arms + 1)]
    return NuisanceFit(mus, prop, cfg)


def predict_nuisance(fit: NuisanceFit, data: PanelDataset, features=None) -> NuisanceValues:
    """Evaluate (mu_0..mu_K, p_1..p_K) on every record of ``data``."""
    cfg = fit.config
    names = set(cfg.features)
    if fit.propensity.mode == "logistic":
        names |= set(fit.propensity.features)
    elif fit.propensity.mode == "spline-logistic":
        names |= set(_design_features(fit.propensity.design))
    if features is None:
        features = feature_frame(data, sorted(names), cfg)
    n = data.n_records
    mu = np.column_stack([m.predict(features, n) for m in fit.mu])
    prob = fit.propensity.predict(data, features)
    return NuisanceValues(mu, prob, fit.propensity.mode)


def nuisance_values(data: PanelDataset, cfg: NuisanceConfig | None = None) -> NuisanceValues:
    """Fit and predict the nuisance functions, optionally with 2-fold cross-fitting."""
    cfg = cfg or NuisanceConfig()
    names = set(cfg.features) | set(cfg.propensity_features)
    features = feature_frame(data, sorted(names), cfg)
    if not cfg.cross_fit:
        fit = fit_nuisance(data, cfg, features)
        return predict_nuisance(fit, data, features)
    rng = np.random.default_rng(cfg.cross_fit_seed)
    fold_of = rng.permutation(data.n) % 2
    fold = fold_of[data.cluster]
    mu = np.empty((data.n_records, data.k_arms + 1))
    prob = np.empty((data.n_records, data.k_arms))
    mode = None
    for f in (0, 1):
        train = data.take(np.flatnonzero(fold != f))
        fit = fit_nuisance(train, cfg)
        idx = np.flatnonzero(fold == f)
        sub = {k: v[idx] for k, v in features.items()}
        held = data.take(idx)
        vals = predict_nuisance(fit, held, sub)
        mu[idx] = vals.mu
        prob[idx] = vals.prob
        mode = vals.mode
    return NuisanceValues(mu, prob, mode)
