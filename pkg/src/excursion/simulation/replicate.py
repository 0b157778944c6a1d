"""Monte Carlo replication studies and their summary tables."""
from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ..errors import AllReplicatesFailed, ExcursionError
from ..estimators import EstimandSpec, estimate
from ..estimators.scores import NONPARAMETRIC
from ..nuisance import NuisanceConfig, nuisance_values
from ..panel import EffectModelSpec
from .generate import ScenarioConfig, gen_scenario, true_effect

ALL_ESTIMATORS = ("ECE", "ECE-NonP", "EMEE", "EMEE-NonP", "DR-EMEE-NonP", "GEE-IND", "GEE-EXCH")
MULTIARM_ESTIMATORS = ("EMEE", "EMEE-NonP", "DR-EMEE-NonP", "GEE-IND", "GEE-EXCH")
METRIC_COLUMNS = ("Estimator", "Parameter", "Time Length", "Bias", "SE", "SD", "RMSE", "CP")


def default_estimators(scenario: int) -> tuple[str, ...]:
    return MULTIARM_ESTIMATORS if scenario == 4 else ALL_ESTIMATORS


def working_model(scenario: int, kind: str) -> EffectModelSpec:
    """Moderators and controls used for every estimator in a study.

    The controls ``(1, Z)`` only enter the parametric and GEE estimators.
    """
    moderators = ("1",) if kind == "marginal" else ("1", "Z")
    k = 2 if scenario == 4 else 1
    return EffectModelSpec(moderators=moderators, controls=("Z",), k_arms=k)


def nuisance_config() -> NuisanceConfig:
    return NuisanceConfig(features=("Z", "treated_lag1"), categorical=("Z",))


def parameter_names(scenario: int, kind: str) -> list[str]:
    base = ["beta0"] if kind == "marginal" else ["beta0", "beta1"]
    if scenario == 4:
        return [f"arm{k}:{b}" for k in (1, 2) for b in base]
    return base


def replicate_rng(seed: int, k: int):
    """Independent stream for replicate ``k``; unaffected by other replicates."""
    return np.random.default_rng([seed, k])


@dataclass
class ReplicateResult:
    index: int
    estimates: dict = field(default_factory=dict)   # estimator -> (est, se)
    errors: dict = field(default_factory=dict)      # estimator -> message
    prob_range: tuple[float, float] = (float("nan"), float("nan"))
    ts_fallbacks: int = 0


def run_one(config: ScenarioConfig, k: int, estimators, kind: str) -> ReplicateResult:
    """Generate replicate ``k`` and apply each estimator to it."""
    rng = replicate_rng(config.seed, k)
    diag: dict = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = gen_scenario(config, rng, diag)
    res = ReplicateResult(index=k, ts_fallbacks=diag.get("ts_fallbacks", 0))
    if data.rand_prob is not None:
        res.prob_range = (float(data.rand_prob.min()), float(data.rand_prob.max()))
    model = working_model(config.scenario, kind)
    cfg = nuisance_config()
    nuis = None
    nuis_error = None
    if any(e in NONPARAMETRIC for e in estimators):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                nuis = nuisance_values(data, cfg)
        except ExcursionError as exc:
            nuis_error = f"{type(exc).__name__}: {exc}"
    for name in estimators:
        if name in NONPARAMETRIC and nuis is None:
            res.errors[name] = nuis_error
            continue
        try:
            rep = estimate(data, model, EstimandSpec(estimator=name, kind=kind),
                           nuisance_cfg=cfg, nuisance=nuis)
            if rep.degenerate:
                res.errors[name] = "degenerate dataset"
                continue
            res.estimates[name] = (np.asarray(rep.estimates, dtype=float),
                                   np.asarray(rep.se, dtype=float))
        except ExcursionError as exc:
            res.errors[name] = f"{type(exc).__name__}: {exc}"
    return res


def compute_metrics(estimates, ses, truth, level: float = 0.95) -> dict:
    """Bias, mean SE, SD, RMSE and coverage for one parameter."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    R = len(est)
    crit = norm.ppf((1 + level) / 2)
    bias = float(est.mean() - truth)
    sd = float(est.std(ddof=1)) if R > 1 else 0.0
    rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
    cp = float(np.mean(np.abs(est - truth) <= crit * se))
    return {"Bias": bias, "SE": float(se.mean()), "SD": sd, "RMSE": rmse, "CP": cp, "R": R}


@dataclass
class ReplicationSummary:
    """Per-estimator, per-parameter Monte Carlo metrics."""

    config: ScenarioConfig
    kind: str
    R: int
    rows: list[dict]
    failures: dict
    failure_log: list[str]
    prob_range: tuple[float, float]
    ts_fallbacks: int = 0

    def row(self, estimator: str, parameter: str | int = 0) -> dict:
        for r in self.rows:
            if r["Estimator"] == estimator and (r["Parameter"] == parameter or
                                                 (isinstance(parameter, int) and r["index"] == parameter)):
                return r
        raise KeyError((estimator, parameter))

    def _cells(self):
        for r in self.rows:
            yield [r["Estimator"], r["Parameter"], str(r["Time Length"]),
                   f"{r['Bias']:.3f}", f"{r['SE']:.3f}", f"{r['SD']:.3f}",
                   f"{r['RMSE']:.3f}", f"{r['CP']:.3f}"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS + ("Replicates", "Failures"))
        for r in self.rows:
            w.writerow([r["Estimator"], r["Parameter"], r["Time Length"],
                        repr(r["Bias"]), repr(r["SE"]), repr(r["SD"]), repr(r["RMSE"]),
                        repr(r["CP"]), r["R"], self.failures.get(r["Estimator"], 0)])
        return buf.getvalue()

    def to_text(self) -> str:
        rows = [list(METRIC_COLUMNS)] + list(self._cells())
        widths = [max(len(r[c]) for r in rows) for c in range(len(METRIC_COLUMNS))]
        lines = ["  ".join(v.ljust(w) if c < 2 else v.rjust(w)
                           for c, (v, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines) + "\n"


def summarize_results(config: ScenarioConfig, kind: str, results, estimators,
                      truth=None) -> ReplicationSummary:
    truth = true_effect(config.scenario, kind) if truth is None else np.asarray(truth, dtype=float)
    names = parameter_names(config.scenario, kind)
    rows, failures, log = [], {}, []
    for res in results:
        for est, msg in sorted(res.errors.items()):
            log.append(f"replicate {res.index}: {est}: {msg}")
    for est in estimators:
        ok = [r.estimates[est] for r in results if est in r.estimates]
        failures[est] = len(results) - len(ok)
        if not ok:
            continue
        E = np.array([o[0] for o in ok])
        S = np.array([o[1] for o in ok])
        for j, pname in enumerate(names):
            m = compute_metrics(E[:, j], S[:, j], truth[j])
            rows.append({"Estimator": est, "Parameter": pname, "index": j,
                         "Time Length": config.T, **m})
    if not rows:
        raise AllReplicatesFailed("every replicate failed for every estimator", failures=log)
    lows = [r.prob_range[0] for r in results if np.isfinite(r.prob_range[0])]
    highs = [r.prob_range[1] for r in results if np.isfinite(r.prob_range[1])]
    prange = (min(lows), max(highs)) if lows else (float("nan"), float("nan"))
    return ReplicationSummary(config, kind, len(results), rows, failures, log, prange,
                              sum(r.ts_fallbacks for r in results))


def _run_star(args):
    return run_one(*args)


def run_replications(config: ScenarioConfig, R: int, estimators=None, kind: str = "marginal",
                     truth=None, workers: int = 1) -> ReplicationSummary:
    """Run ``R`` independent replicates and summarize each estimator.

    Replicate ``k`` draws from the stream seeded by ``(config.seed, k)``, so
    results do not depend on the worker count or on other replicates.
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    estimators = tuple(estimators or default_estimators(config.scenario))
    unknown = set(estimators) - set(ALL_ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    if config.scenario == 4:
        bad = [e for e in estimators if e.startswith("ECE")]
        if bad:
            raise ValueError(f"{bad} support a single active arm only")
    jobs = [(config, k, estimators, kind) for k in range(R)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_star, jobs))
    else:
        results = [run_one(*j) for j in jobs]
    return summarize_results(config, kind, results, estimators, truth)
