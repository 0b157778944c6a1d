"""Command-line interface: ``excursion analyze`` and ``excursion simulate``.

Options come from flat ``key=value`` config files and command-line flags,
with flags taking precedence. Every output file starts with ``# key=value``
lines holding the resolved configuration, so any output can be passed back
as ``--config`` to reproduce it.

Exit codes: 0 on success, 1 when estimation fails, 2 for bad input.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import AllReplicatesFailed, EstimationError, InputError, InvalidConfig
from .estimators import ESTIMATORS, EstimandSpec, estimate
from .nuisance import NuisanceConfig
from .panel import EffectModelSpec, load_panel
from .simulation import ALL_ESTIMATORS, ScenarioConfig, run_replications

EXIT_OK, EXIT_ESTIMATION, EXIT_INPUT = 0, 1, 2
_LINE = re.compile(r"^\s*(?:#\s*)?([A-Za-z_][\w.]*)\s*=\s*(.*?)\s*$")

ANALYZE_DEFAULTS = {
    "input": "",
    "output": "",
    "estimator": "EMEE-NonP",
    "moderators": "1",
    "controls": "",
    "k_arms": "",
    "p_tilde": "",
    "propensity_mode": "auto",
    "propensity_features": "1",
    "nuisance_features": "",
    "categorical": "",
    "n_basis": "10",
    "eps_p": "0.01",
    "cross_fit": "false",
    "use_t": "false",
    "cluster_meat": "false",
    "seed": "0",
    "schema": "",
}

SIMULATE_DEFAULTS = {
    "output": "",
    "scenario": "1",
    "n": "100",
    "T": "30",
    "R": "200",
    "estimators": "",
    "kind": "marginal",
    "r": "1.0",
    "ts_alpha": "1.0",
    "ts_warmup": "20",
    "seed": "0",
    "workers": "1",
}

# keys that do not change results and are left out of embedded configs
_VOLATILE = {"output", "workers"}


def read_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#``-prefixed assignments are accepted too."""
    path = Path(path)
    if not path.exists():
        raise InvalidConfig(f"config file not found: {path}")
    out = {}
    for line in path.read_text().splitlines():
        m = _LINE.match(line)
        if m:
            out[m.group(1)] = m.group(2)
    return out


def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise InvalidConfig(f"{key}: expected a boolean, got '{value}'")


def _num(value: str, key: str, kind=float):
    try:
        return kind(value)
    except ValueError as exc:
        raise InvalidConfig(f"{key}: expected {kind.__name__}, got '{value}'") from exc


def resolve(defaults: dict, args: argparse.Namespace) -> dict[str, str]:
    cfg = dict(defaults)
    for path in args.config or ():
        file_cfg = read_config(path)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise InvalidConfig(f"{path}: unknown config keys {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is None:
            continue
        cfg[key] = ",".join(val) if isinstance(val, list) else str(val)
    return cfg


def config_header(cfg: dict[str, str]) -> str:
    return "".join(f"# {k}={cfg[k]}\n" for k in sorted(cfg) if k not in _VOLATILE)


def _output_dir(cfg) -> Path | None:
    if not cfg.get("output"):
        return None
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------- analyze

def _schema(value: str) -> dict[str, str]:
    schema = {}
    for item in _split(value):
        if ":" not in item:
            raise InvalidConfig(f"schema entries look like logical:column, got '{item}'")
        k, v = item.split(":", 1)
        schema[k.strip()] = v.strip()
    return schema


def cmd_analyze(cfg: dict[str, str]) -> int:
    if not cfg["input"]:
        raise InvalidConfig("analyze needs an input panel (--input)")
    if cfg["estimator"] not in ESTIMATORS:
        raise InvalidConfig(f"estimator must be one of {ESTIMATORS}")
    k_arms = _num(cfg["k_arms"], "k_arms", int) if cfg["k_arms"] else None
    data = load_panel(cfg["input"], _schema(cfg["schema"]), k_arms=k_arms)
    model = EffectModelSpec(moderators=_split(cfg["moderators"]) or ("1",),
                            controls=_split(cfg["controls"]), k_arms=data.k_arms)
    p_tilde = None
    if cfg["p_tilde"]:
        vals = [_num(v, "p_tilde") for v in _split(cfg["p_tilde"])]
        p_tilde = vals[0] if len(vals) == 1 else tuple(vals)
    estimand = EstimandSpec(estimator=cfg["estimator"], p_tilde=p_tilde,
                            use_t=_bool(cfg["use_t"], "use_t"),
                            cluster_meat=_bool(cfg["cluster_meat"], "cluster_meat"))
    features = _split(cfg["nuisance_features"])
    if not features:
        features = tuple(sorted(data.covariates))
    ncfg = NuisanceConfig(features=features, categorical=_split(cfg["categorical"]),
                          n_basis=_num(cfg["n_basis"], "n_basis", int),
                          propensity_mode=cfg["propensity_mode"],
                          propensity_features=_split(cfg["propensity_features"]) or ("1",),
                          eps_p=_num(cfg["eps_p"], "eps_p"),
                          cross_fit=_bool(cfg["cross_fit"], "cross_fit"),
                          cross_fit_seed=_num(cfg["seed"], "seed", int))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = estimate(data, model, estimand, nuisance_cfg=ncfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    table = report.to_table()
    print(table)
    out = _output_dir(cfg)
    if out is not None:
        header = config_header(cfg)
        payload = report.to_dict()
        payload["config"] = {k: cfg[k] for k in sorted(cfg) if k not in _VOLATILE}
        (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
        (out / "report.txt").write_text(header + table + "\n")
    return EXIT_OK


# ------------------------------------------------------------------- simulate

def cmd_simulate(cfg: dict[str, str]) -> int:
    estimators = _split(cfg["estimators"]) or None
    if estimators:
        bad = set(estimators) - set(ALL_ESTIMATORS)
        if bad:
            raise InvalidConfig(f"unknown estimators {sorted(bad)}")
    R = _num(cfg["R"], "R", int)
    if R < 2:
        raise InvalidConfig("R must be at least 2")
    if cfg["kind"] not in ("marginal", "conditional"):
        raise InvalidConfig("kind must be 'marginal' or 'conditional'")
    workers = _num(cfg["workers"], "workers", int)
    summaries = []
    for T in _split(cfg["T"]):
        sc = ScenarioConfig(scenario=_num(cfg["scenario"], "scenario", int),
                            n=_num(cfg["n"], "n", int), T=_num(T, "T", int),
                            r=_num(cfg["r"], "r"), ts_alpha=_num(cfg["ts_alpha"], "ts_alpha"),
                            ts_warmup=_num(cfg["ts_warmup"], "ts_warmup", int),
                            seed=_num(cfg["seed"], "seed", int))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            summaries.append(run_replications(sc, R, estimators, cfg["kind"], workers=workers))

    header = config_header(cfg)
    text = "".join(s.to_text() for s in summaries)
    csv_body = summaries[0].to_csv() + "".join(s.to_csv().split("\n", 1)[1] for s in summaries[1:])
    lo = min(s.prob_range[0] for s in summaries)
    hi = max(s.prob_range[1] for s in summaries)
    notes = (f"# diagnostics: replicates={R} failures={sum(sum(s.failures.values()) for s in summaries)}"
             f" ts_fallbacks={sum(s.ts_fallbacks for s in summaries)}"
             f" prob_min={lo!r} prob_max={hi!r}\n")
    print(text, end="")
    for s in summaries:
        for line in s.failure_log:
            print(f"failed: {line}", file=sys.stderr)
    out = _output_dir(cfg)
    if out is not None:
        (out / "summary.txt").write_text(header + notes + text)
        (out / "summary.csv").write_text(header + notes + csv_body)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="excursion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="estimate excursion effects from a panel CSV")
    an.add_argument("--config", action="append", help="key=value config file (repeatable)")
    an.add_argument("--input", help="panel CSV")
    an.add_argument("--output", help="directory for report.json and report.txt")
    an.add_argument("--estimator", choices=ESTIMATORS)
    an.add_argument("--moderator", dest="moderators", action="append",
                    help="moderator feature (repeatable); the intercept is always included")
    an.add_argument("--control", dest="controls", action="append",
                    help="control feature for parametric and GEE fits (repeatable)")
    an.add_argument("--k-arms", dest="k_arms", type=int)
    an.add_argument("--p-tilde", dest="p_tilde",
                    help="reference probability, or comma list per arm")
    an.add_argument("--propensity-mode", dest="propensity_mode",
                    choices=("auto", "known-prob", "sample-proportion", "logistic", "spline-logistic"))
    an.add_argument("--propensity-feature", dest="propensity_features", action="append")
    an.add_argument("--nuisance-feature", dest="nuisance_features", action="append",
                    help="history feature for the outcome-mean fits (repeatable)")
    an.add_argument("--categorical", action="append")
    an.add_argument("--n-basis", dest="n_basis", type=int)
    an.add_argument("--eps-p", dest="eps_p", type=float)
    an.add_argument("--cross-fit", dest="cross_fit", action="store_const", const="true")
    an.add_argument("--use-t", dest="use_t", action="store_const", const="true")
    an.add_argument("--cluster-meat", dest="cluster_meat", action="store_const", const="true")
    an.add_argument("--schema", action="append", help="logical:column header mapping")
    an.add_argument("--seed", type=int)

    sim = sub.add_parser("simulate", help="run a replication study")
    sim.add_argument("--config", action="append", help="key=value config file (repeatable)")
    sim.add_argument("--output", help="directory for summary.csv and summary.txt")
    sim.add_argument("--scenario", type=int, choices=(1, 2, 3, 4))
    sim.add_argument("--n", type=int)
    sim.add_argument("--T", help="decision points, or a comma list")
    sim.add_argument("--R", type=int)
    sim.add_argument("--estimator", dest="estimators", action="append", choices=ALL_ESTIMATORS)
    sim.add_argument("--kind", choices=("marginal", "conditional"))
    sim.add_argument("--r", type=float, help="negative binomial dispersion")
    sim.add_argument("--ts-alpha", dest="ts_alpha", type=float)
    sim.add_argument("--ts-warmup", dest="ts_warmup", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    np.seterr(all="ignore")
    try:
        if args.command == "analyze":
            return cmd_analyze(resolve(ANALYZE_DEFAULTS, args))
        return cmd_simulate(resolve(SIMULATE_DEFAULTS, args))
    except AllReplicatesFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        for line in exc.failures or ():
            print(f"failed: {line}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
