"""End-to-end excursion-effect estimation and reporting."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from ..errors import DegenerateArm, RankDeficientControls
from ..nuisance import NuisanceConfig, NuisanceValues, fit_penalized_glm, fit_propensity, nuisance_values
from ..panel import EffectModelSpec, PanelDataset, build_design
from .gee import fit_log_gee
from .scores import NONPARAMETRIC, TERMS, ScoreInputs
from .solver import sandwich_cov, solve_score

ESTIMATORS = ("ECE", "ECE-NonP", "EMEE", "EMEE-NonP", "DR-EMEE-NonP", "GEE-IND", "GEE-EXCH")
GEE_CORR = {"GEE-IND": "independence", "GEE-EXCH": "exchangeable"}


@dataclass(frozen=True)
class EstimandSpec:
    """What to estimate and how.

    ``p_tilde`` is ``None`` for the availability-weighted sample proportion of
    each arm, or a float / per-arm sequence of constants.
    """

    estimator: str = "EMEE-NonP"
    kind: str = "marginal"
    p_tilde: float | Sequence[float] | None = None
    tol: float = 1e-8
    use_t: bool = False
    cluster_meat: bool = False
    level: float = 0.95

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator '{self.estimator}'; choose from {ESTIMATORS}")
        if self.kind not in ("marginal", "conditional"):
            raise ValueError("kind must be 'marginal' or 'conditional'")


@dataclass
class EstimateReport:
    estimator: str
    names: list[str]
    estimates: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    pvalues: np.ndarray
    iterations: int = 0
    score_norm: float = 0.0
    converged: bool = True
    nuisance_mode: str = ""
    n_records: int = 0
    n_participants: int = 0
    degenerate: bool = False
    control_estimates: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        def arr(a):
            return None if a is None else [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]
        return {
            "estimator": self.estimator,
            "parameters": list(self.names),
            "estimates": arr(self.estimates),
            "se": arr(self.se),
            "ci_lower": arr(self.ci_lower),
            "ci_upper": arr(self.ci_upper),
            "p_values": arr(self.pvalues),
            "covariance": [arr(row) for row in np.atleast_2d(self.covariance)],
            "diagnostics": {"iterations": self.iterations, "score_norm": self.score_norm,
                            "converged": self.converged, "degenerate": self.degenerate,
                            **{k: v for k, v in self.extra.items()}},
            "nuisance_mode": self.nuisance_mode,
            "n_records": self.n_records,
            "n_participants": self.n_participants,
            "control_estimates": arr(self.control_estimates),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        rows = [("Parameter", "Estimate", "SE", "95% CI", "p-Value")]
        for j, name in enumerate(self.names):
            pv = self.pvalues[j]
            ptxt = "<0.001" if pv < 0.001 else f"{pv:.3f}"
            rows.append((name, f"{self.estimates[j]:.3f}", f"{self.se[j]:.3f}",
                         f"({self.ci_lower[j]:.3f},{self.ci_upper[j]:.3f})", ptxt))
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        lines = [f"Estimator: {self.estimator}"]
        for r in rows:
            lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def _inference(est, cov, level, df=None):
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    q = (1 + level) / 2
    crit = stats.t.ppf(q, df) if df else stats.norm.ppf(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = est / se
    if df:
        pv = 2 * stats.t.sf(np.abs(z), df)
    else:
        pv = 2 * stats.norm.sf(np.abs(z))
    return se, est - crit * se, est + crit * se, pv


def effect_names(spec_terms, k_arms):
    if k_arms == 1:
        return list(spec_terms)
    return [f"arm{k}:{t}" for k in range(1, k_arms + 1) for t in spec_terms]


def reference_probs(data: PanelDataset, p_tilde) -> np.ndarray:
    K = data.k_arms
    if p_tilde is None:
        avail = data.availability == 1
        counts = np.array([np.sum(avail & (data.arm == k)) for k in range(1, K + 1)], dtype=float)
        probs = counts / max(avail.sum(), 1)
    else:
        probs = np.broadcast_to(np.asarray(p_tilde, dtype=float), (K,)).astype(float)
    if np.any(probs <= 0) or np.any(probs >= 1) or probs.sum() >= 1:
        raise DegenerateArm(f"reference probabilities {probs.tolist()} must lie in (0,1) and sum below 1")
    return np.broadcast_to(probs, (data.n_records, K))


def _alpha_init(inp: ScoreInputs):
    sel = (inp.avail == 1) & (inp.arm == 0)
    y = inp.y[sel]
    if not np.any(y > 0):
        return np.zeros(inp.q)
    try:
        return fit_penalized_glm(inp.G[sel], y, family="poisson").coef
    except Exception:
        init = np.zeros(inp.q)
        init[0] = math.log(y.mean())
        return init


def prepare_inputs(data: PanelDataset, model: EffectModelSpec, estimand: EstimandSpec,
                   nuisance: NuisanceValues | None = None,
                   nuisance_cfg: NuisanceConfig | None = None) -> tuple[ScoreInputs, str]:
    """Assemble design, propensities, reference probabilities and nuisance means."""
    design = build_design(data, model)
    K = design.arm_dummies.shape[1]
    avail = design.availability
    counts = [int(np.sum((avail == 1) & (design.arm == k))) for k in range(K + 1)]
    if any(c == 0 for c in counts):
        raise DegenerateArm(f"arm counts among available records {counts}: every arm must be observed")
    if design.controls is not None and estimand.estimator in ("ECE", "EMEE", "GEE-IND", "GEE-EXCH"):
        Ga = design.controls[avail == 1]
        if np.linalg.matrix_rank(Ga) < Ga.shape[1]:
            raise RankDeficientControls("control features are linearly dependent on available records")
    cfg = nuisance_cfg or NuisanceConfig()
    mu = None
    if estimand.estimator in NONPARAMETRIC:
        if nuisance is None:
            nuisance = nuisance_values(data, cfg)
        mu = nuisance.mu
        prob = nuisance.prob
        mode = nuisance.mode
    elif nuisance is not None:
        prob, mode = nuisance.prob, nuisance.mode
    else:
        mode = cfg.resolved_mode(data)
        prop = fit_propensity(data, mode, cfg.propensity_features, cfg.eps_p, cfg)
        prob = prop.predict(data)
    inp = ScoreInputs(
        y=np.asarray(data.outcome, dtype=float),
        avail=avail,
        arm=design.arm,
        dummies=design.arm_dummies,
        S=design.moderators,
        G=design.controls,
        prob=np.asarray(prob, dtype=float),
        p_tilde=np.asarray(reference_probs(data, estimand.p_tilde)),
        mu=mu,
    )
    return inp, mode


def _degenerate_report(estimand, names, data, mode):
    d = len(names)
    inf = np.full(d, np.inf)
    return EstimateReport(estimand.estimator, names, np.zeros(d), np.diag(inf), inf,
                          -inf, inf.copy(), np.ones(d), 0, 0.0, False, mode,
                          data.n_records, data.n, degenerate=True,
                          extra={"message": "all available outcomes are zero; log-ratio undefined"})


def estimate(data: PanelDataset, model: EffectModelSpec, estimand: EstimandSpec | None = None,
             nuisance_cfg: NuisanceConfig | None = None,
             nuisance: NuisanceValues | None = None) -> EstimateReport:
    """Fit nuisances, solve the chosen estimating equation, and report sandwich inference."""
    estimand = estimand or EstimandSpec()
    if estimand.estimator in GEE_CORR:
        return fit_gee(data, model, GEE_CORR[estimand.estimator], estimand)
    K = model.k_arms or data.k_arms
    names = effect_names(model.moderator_terms, K)
    if not np.any(data.outcome[data.availability == 1] > 0):
        mode = (nuisance_cfg or NuisanceConfig()).resolved_mode(data)
        return _degenerate_report(estimand, names, data, mode)

    inp, mode = prepare_inputs(data, model, estimand, nuisance, nuisance_cfg)
    terms_fn = TERMS[estimand.estimator]
    N = inp.n_records

    def fun(theta):
        return terms_fn(inp, theta).sum(axis=0) / N

    d_eff = inp.p * inp.k_arms
    if estimand.estimator in ("ECE", "EMEE"):
        init = np.concatenate([_alpha_init(inp), np.zeros(d_eff)])
    else:
        init = np.zeros(d_eff)
    res = solve_score(fun, init, tol=estimand.tol)
    cluster = data.cluster if estimand.cluster_meat else None
    cov_full, jac = sandwich_cov(lambda th: terms_fn(inp, th), res.theta, cluster=cluster)
    q = len(init) - d_eff
    est = res.theta[q:]
    cov = cov_full[q:, q:]
    df = N - len(init) if estimand.use_t else None
    se, lo, hi, pv = _inference(est, cov, estimand.level, df)
    return EstimateReport(
        estimator=estimand.estimator, names=names, estimates=est, covariance=cov, se=se,
        ci_lower=lo, ci_upper=hi, pvalues=pv, iterations=res.iterations,
        score_norm=res.norm, converged=res.converged, nuisance_mode=mode,
        n_records=N, n_participants=data.n,
        control_estimates=res.theta[:q] if q else None,
        extra={"restarts": res.restarts},
    )


def fit_gee(data: PanelDataset, model: EffectModelSpec, working_corr: str = "independence",
            estimand: EstimandSpec | None = None) -> EstimateReport:
    """Log-link GEE with mean exp(g'alpha + sum_k A_k S'beta_k) on available records."""
    estimand = estimand or EstimandSpec(
        estimator="GEE-IND" if working_corr == "independence" else "GEE-EXCH")
    design = build_design(data, model)
    K = design.arm_dummies.shape[1]
    names = effect_names(model.moderator_terms, K)
    avail = design.availability == 1
    counts = [int(np.sum(avail & (design.arm == k))) for k in range(K + 1)]
    if any(c == 0 for c in counts):
        raise DegenerateArm(f"arm counts among available records {counts}: every arm must be observed")
    if not np.any(data.outcome[avail] > 0):
        return _degenerate_report(estimand, names, data, "none")
    G = design.controls if design.controls is not None else np.ones((data.n_records, 1))
    AS = (design.arm_dummies[:, :, None] * design.moderators[:, None, :]).reshape(data.n_records, -1)
    X = np.hstack([G, AS])[avail]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientControls("GEE design is rank deficient")
    y = data.outcome[avail]
    b, cov_full, rho, it = fit_log_gee(X, y, data.cluster[avail], working_corr)
    q = G.shape[1]
    est, cov = b[q:], cov_full[q:, q:]
    df = int(avail.sum()) - X.shape[1] if estimand.use_t else None
    se, lo, hi, pv = _inference(est, cov, estimand.level, df)
    mu = np.exp(X @ b)
    score_norm = float(np.max(np.abs(X.T @ (y - mu)))) / len(y) if working_corr == "independence" else 0.0
    return EstimateReport(
        estimator=estimand.estimator, names=names, estimates=est, covariance=cov, se=se,
        ci_lower=lo, ci_upper=hi, pvalues=pv, iterations=it, score_norm=score_norm,
        converged=True, nuisance_mode="none", n_records=data.n_records, n_participants=data.n,
        control_estimates=b[:q], extra={"working_correlation": working_corr, "rho": rho},
    )
