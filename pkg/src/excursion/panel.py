"""Longitudinal panel data for micro-randomized trials.

A panel holds one row per (participant, decision point). Arrays are stored
column-wise and made read-only after validation so a dataset can be shared
between estimators and worker threads without copying.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateDecisionPoint,
    EmptyDataset,
    InvalidPanel,
    LagBeforeStart,
    MissingColumn,
    NonIntegerOutcome,
    ProbabilityOutOfRange,
    UnknownFeature,
)

DEFAULT_SCHEMA = {
    "participant": "participant",
    "t": "t",
    "availability": "availability",
    "arm": "arm",
    "outcome": "outcome",
    "rand_prob": "rand_prob",
}

BUILTIN_LAGGABLE = ("outcome", "arm", "treated")
_LAG_RE = re.compile(r"^(?P<base>.+)_lag(?P<k>\d+)$")


@dataclass(frozen=True)
class DecisionRecord:
    participant_id: object
    t: int
    availability: int
    arm: int
    outcome: int
    covariates: Mapping[str, float] = field(default_factory=dict)
    rand_prob: tuple[float, ...] | None = None


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Validated MRT panel, sorted by (participant, t).

    ``rand_prob`` is an ``(N, K)`` array of randomization probabilities for
    arms 1..K, or ``None`` for observational data.
    """

    participant: np.ndarray
    t: np.ndarray
    availability: np.ndarray
    arm: np.ndarray
    outcome: np.ndarray
    covariates: Mapping[str, np.ndarray]
    rand_prob: np.ndarray | None = None
    k_arms: int = 1
    cluster: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        participant = np.asarray(self.participant)
        t = np.asarray(self.t, dtype=np.int64)
        availability = np.asarray(self.availability, dtype=np.int64)
        arm = np.asarray(self.arm, dtype=np.int64)
        outcome = np.asarray(self.outcome, dtype=float)
        n = len(t)
        for name, col in (("participant", participant), ("availability", availability),
                          ("arm", arm), ("outcome", outcome)):
            if len(col) != n:
                raise InvalidPanel(f"column '{name}' has length {len(col)}, expected {n}")
        covs = {}
        for name, col in self.covariates.items():
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise InvalidPanel(f"covariate '{name}' has shape {col.shape}, expected ({n},)")
            if name in BUILTIN_LAGGABLE or name == "t" or _LAG_RE.match(name):
                raise InvalidPanel(f"covariate name '{name}' collides with a built-in feature")
            covs[name] = col

        rand_prob = self.rand_prob
        if rand_prob is not None:
            rand_prob = np.asarray(rand_prob, dtype=float)
            if rand_prob.ndim == 1:
                rand_prob = rand_prob[:, None]
            if rand_prob.shape[0] != n:
                raise InvalidPanel("rand_prob has the wrong number of rows")
        k_arms = int(self.k_arms)
        if rand_prob is not None and rand_prob.shape[1] != k_arms:
            raise InvalidPanel(f"rand_prob has {rand_prob.shape[1]} columns but k_arms={k_arms}")

        order = _sort_order(participant, t)
        if not np.array_equal(order, np.arange(n)):
            participant, t, availability, arm, outcome = (
                a[order] for a in (participant, t, availability, arm, outcome))
            covs = {k: v[order] for k, v in covs.items()}
            if rand_prob is not None:
                rand_prob = rand_prob[order]

        _validate(participant, t, availability, arm, outcome, rand_prob, k_arms)

        # participant codes in order of first appearance after sorting
        if n:
            new_group = np.ones(n, dtype=bool)
            new_group[1:] = participant[1:] != participant[:-1]
            cluster = np.cumsum(new_group) - 1
        else:
            cluster = np.zeros(0, dtype=np.int64)

        set_ = object.__setattr__
        set_(self, "participant", _readonly(participant))
        set_(self, "t", _readonly(t))
        set_(self, "availability", _readonly(availability))
        set_(self, "arm", _readonly(arm))
        set_(self, "outcome", _readonly(outcome))
        set_(self, "covariates", {k: _readonly(v) for k, v in covs.items()})
        set_(self, "rand_prob", None if rand_prob is None else _readonly(rand_prob))
        set_(self, "k_arms", k_arms)
        set_(self, "cluster", _readonly(cluster))

    @property
    def n_records(self) -> int:
        return len(self.t)

    @property
    def n(self) -> int:
        return int(self.cluster[-1]) + 1 if self.n_records else 0

    @property
    def t_max(self) -> int:
        return int(self.t.max()) if self.n_records else 0

    @property
    def has_known_probs(self) -> bool:
        return self.rand_prob is not None

    def records(self) -> Iterator[DecisionRecord]:
        names = list(self.covariates)
        for i in range(self.n_records):
            yield DecisionRecord(
                participant_id=self.participant[i].item(),
                t=int(self.t[i]),
                availability=int(self.availability[i]),
                arm=int(self.arm[i]),
                outcome=int(self.outcome[i]),
                covariates={k: float(self.covariates[k][i]) for k in names},
                rand_prob=None if self.rand_prob is None else tuple(map(float, self.rand_prob[i])),
            )

    @classmethod
    def from_records(cls, records: Sequence[DecisionRecord], k_arms: int | None = None):
        records = list(records)
        if not records:
            raise EmptyDataset("no records")
        names = list(records[0].covariates)
        probs = [r.rand_prob for r in records]
        has_probs = [p is not None for p in probs]
        if any(has_probs) and not all(has_probs):
            raise InvalidPanel("rand_prob must be present for all records or none")
        rand_prob = np.array(probs, dtype=float) if all(has_probs) else None
        arm = np.array([r.arm for r in records])
        if k_arms is None:
            k_arms = rand_prob.shape[1] if rand_prob is not None else max(1, int(arm.max()))
        return cls(
            participant=np.array([r.participant_id for r in records]),
            t=np.array([r.t for r in records]),
            availability=np.array([r.availability for r in records]),
            arm=arm,
            outcome=np.array([r.outcome for r in records], dtype=float),
            covariates={k: np.array([r.covariates[k] for r in records], dtype=float) for k in names},
            rand_prob=rand_prob,
            k_arms=k_arms,
        )

    def take(self, index) -> "PanelDataset":
        """Row subset (re-sorted); ``index`` is any numpy indexer."""
        index = np.asarray(index)
        return PanelDataset(
            participant=self.participant[index],
            t=self.t[index],
            availability=self.availability[index],
            arm=self.arm[index],
            outcome=self.outcome[index],
            covariates={k: v[index] for k, v in self.covariates.items()},
            rand_prob=None if self.rand_prob is None else self.rand_prob[index],
            k_arms=self.k_arms,
        )

    def replace(self, **changes) -> "PanelDataset":
        fields = dict(
            participant=self.participant, t=self.t, availability=self.availability,
            arm=self.arm, outcome=self.outcome, covariates=self.covariates,
            rand_prob=self.rand_prob, k_arms=self.k_arms,
        )
        fields.update(changes)
        return PanelDataset(**fields)

    def without_probs(self) -> "PanelDataset":
        return self.replace(rand_prob=None)

    def participants(self) -> np.ndarray:
        first = np.ones(self.n_records, dtype=bool)
        first[1:] = self.cluster[1:] != self.cluster[:-1]
        return self.participant[first]


def _sort_order(participant, t):
    if len(t) == 0:
        return np.zeros(0, dtype=np.int64)
    try:
        return np.lexsort((t, participant))
    except TypeError:
        keys = [(str(p), int(tt)) for p, tt in zip(participant, t)]
        return np.array(sorted(range(len(keys)), key=keys.__getitem__))


def _validate(participant, t, availability, arm, outcome, rand_prob, k_arms):
    if k_arms < 1:
        raise InvalidPanel("k_arms must be at least 1")
    if np.any(~np.isfinite(outcome)) or np.any(outcome < 0) or np.any(outcome != np.round(outcome)):
        bad = np.flatnonzero(~np.isfinite(outcome) | (outcome < 0) | (outcome != np.round(outcome)))
        raise NonIntegerOutcome(f"outcome must be a nonnegative integer (row {bad[0]})")
    if np.any((availability != 0) & (availability != 1)):
        raise InvalidPanel("availability must be 0 or 1")
    if np.any(arm < 0) or np.any(arm > k_arms):
        raise InvalidPanel(f"arm must lie in 0..{k_arms}")
    if np.any((availability == 0) & (arm != 0)):
        raise InvalidPanel("arm must be 0 when availability is 0")
    if np.any(t < 1):
        raise InvalidPanel("decision index t is 1-based")
    if rand_prob is not None:
        _check_probs(rand_prob)
    same = participant[1:] == participant[:-1]
    dup = same & (t[1:] == t[:-1])
    if np.any(dup):
        i = int(np.flatnonzero(dup)[0])
        raise DuplicateDecisionPoint(
            f"duplicate decision point (participant={participant[i]!r}, t={t[i]})")


def _check_probs(rand_prob, line_offset=None):
    ok = (rand_prob > 0) & (rand_prob < 1)
    ok_sum = rand_prob.sum(axis=1) < 1
    bad = ~(ok.all(axis=1) & ok_sum)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        where = f"line {i + line_offset}" if line_offset is not None else f"row {i}"
        raise ProbabilityOutOfRange(
            f"randomization probabilities {rand_prob[i].tolist()} at {where} "
            "must each lie in (0, 1) and sum to less than 1")


# --------------------------------------------------------------------------- IO

def load_panel(path, schema: Mapping[str, str] | None = None, k_arms: int | None = None) -> PanelDataset:
    """Read a comma-separated panel file.

    ``schema`` maps logical names (participant, t, availability, arm, outcome,
    rand_prob) to header names. Probability columns are either a single
    ``<rand_prob>`` column (K = 1) or ``<rand_prob>_1 .. <rand_prob>_K``.
    Every other numeric column becomes a covariate.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"panel file not found: {path}")
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if v})
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InvalidPanel(f"{path}: could not parse CSV: {exc}") from exc
    df.columns = [str(c).strip() for c in df.columns]
    for key in ("participant", "t", "availability", "arm", "outcome"):
        if cols[key] not in df.columns:
            raise MissingColumn(cols[key], path)
    if df.empty:
        raise EmptyDataset(f"{path}: no data rows")

    prob_name = cols["rand_prob"]
    if prob_name in df.columns:
        prob_cols = [prob_name]
    else:
        prob_cols = []
        j = 1
        while f"{prob_name}_{j}" in df.columns:
            prob_cols.append(f"{prob_name}_{j}")
            j += 1
    if k_arms is not None and prob_cols and len(prob_cols) != k_arms:
        raise InvalidPanel(f"{path}: found {len(prob_cols)} probability columns for k_arms={k_arms}")

    def numeric(name):
        try:
            return pd.to_numeric(df[name]).to_numpy(dtype=float)
        except (ValueError, TypeError) as exc:
            raise InvalidPanel(f"{path}: column '{name}' is not numeric: {exc}") from exc

    outcome = numeric(cols["outcome"])
    bad = np.flatnonzero(~np.isfinite(outcome) | (outcome < 0) | (outcome != np.round(outcome)))
    if len(bad):
        raise NonIntegerOutcome(
            f"{path}: line {bad[0] + 2}: column '{cols['outcome']}' value {outcome[bad[0]]!r} "
            "is not a nonnegative integer")
    int_cols = {}
    for key in ("t", "availability", "arm"):
        vals = numeric(cols[key])
        bad = np.flatnonzero(~np.isfinite(vals) | (vals != np.round(vals)))
        if len(bad):
            raise InvalidPanel(f"{path}: line {bad[0] + 2}: column '{cols[key]}' must hold integers")
        int_cols[key] = vals.astype(np.int64)

    rand_prob = None
    if prob_cols:
        rand_prob = np.column_stack([numeric(c) for c in prob_cols])
        _check_probs(rand_prob, line_offset=2)
    reserved = {cols[k] for k in ("participant", "t", "availability", "arm", "outcome")}
    reserved.update(prob_cols)
    covariates = {c: numeric(c) for c in df.columns if c not in reserved}
    if k_arms is None:
        k_arms = len(prob_cols) if prob_cols else max(1, int(int_cols["arm"].max()))

    participant = df[cols["participant"]].to_numpy()
    try:
        return PanelDataset(
            participant=participant,
            t=int_cols["t"],
            availability=int_cols["availability"],
            arm=int_cols["arm"],
            outcome=outcome,
            covariates=covariates,
            rand_prob=rand_prob,
            k_arms=k_arms,
        )
    except InvalidPanel as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def write_panel(data: PanelDataset, path, schema: Mapping[str, str] | None = None) -> None:
    """Write a panel so that :func:`load_panel` reproduces it exactly."""
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if v})
    header = [cols[k] for k in ("participant", "t", "availability", "arm", "outcome")]
    prob_cols = []
    if data.rand_prob is not None:
        k = data.rand_prob.shape[1]
        prob_cols = [cols["rand_prob"]] if k == 1 else [f"{cols['rand_prob']}_{j}" for j in range(1, k + 1)]
    names = list(data.covariates)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + prob_cols + names)
        for i in range(data.n_records):
            row = [data.participant[i].item(), int(data.t[i]), int(data.availability[i]),
                   int(data.arm[i]), int(data.outcome[i])]
            if prob_cols:
                row += [repr(float(p)) for p in data.rand_prob[i]]
            row += [_fmt(data.covariates[c][i]) for c in names]
            w.writerow(row)


def _fmt(x):
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


# ---------------------------------------------------------------------- features

@dataclass(frozen=True)
class EffectModelSpec:
    """Declarative moderator S_t / control g(H_t) feature lists.

    Feature expressions: ``1``; a covariate name; ``t``; lags such as
    ``outcome_lag1``, ``arm_lag1``, ``treated_lag1`` or ``<covariate>_lag2``;
    indicators ``Z==1``; and products ``a*b``.
    """

    moderators: tuple[str, ...] = ("1",)
    controls: tuple[str, ...] = ()
    moderator_intercept: bool = True
    control_intercept: bool = True
    k_arms: int | None = None
    lag_initial: Mapping[str, float] = field(default_factory=dict)
    lag_default: float | None = 0.0

    def __post_init__(self):
        object.__setattr__(self, "moderators", tuple(self.moderators))
        object.__setattr__(self, "controls", tuple(self.controls))
        if not self.moderator_terms:
            raise ValueError("moderator list must be nonempty")

    @property
    def moderator_terms(self) -> tuple[str, ...]:
        return _with_intercept(self.moderators, self.moderator_intercept)

    @property
    def control_terms(self) -> tuple[str, ...]:
        if not self.controls and not self.control_intercept:
            return ()
        return _with_intercept(self.controls, self.control_intercept)


def _with_intercept(terms, flag):
    terms = tuple(t.strip() for t in terms)
    if flag and "1" not in terms:
        return ("1",) + terms
    return terms


@dataclass(frozen=True)
class DesignBundle:
    moderators: np.ndarray          # (N, p)
    controls: np.ndarray | None     # (N, q)
    availability: np.ndarray        # (N,) float 0/1
    arm: np.ndarray                 # (N,) int
    arm_dummies: np.ndarray         # (N, K)
    moderator_names: tuple[str, ...]
    control_names: tuple[str, ...]

    @property
    def p(self) -> int:
        return self.moderators.shape[1]


def lagged(data: PanelDataset, values: np.ndarray, k: int, initial: float | None, name: str):
    """Shift ``values`` by ``k`` records within each participant."""
    out = np.empty(data.n_records, dtype=float)
    cl = data.cluster
    pos = np.arange(data.n_records)
    start = np.zeros(data.n_records, dtype=np.int64)
    if data.n_records:
        first = np.ones(data.n_records, dtype=bool)
        first[1:] = cl[1:] != cl[:-1]
        start = np.maximum.accumulate(np.where(first, pos, 0))
    src = pos - k
    has_prev = src >= start
    out[has_prev] = values[src[has_prev]]
    if np.any(~has_prev):
        if initial is None:
            raise LagBeforeStart(f"feature '{name}' requested before the first decision point "
                                 "and no initial value was declared")
        out[~has_prev] = initial
    return out


def _base_values(data: PanelDataset, base: str, name: str):
    if base == "outcome":
        return data.outcome.astype(float)
    if base == "arm":
        return data.arm.astype(float)
    if base == "treated":
        return (data.arm > 0).astype(float)
    if base in data.covariates:
        return data.covariates[base]
    raise UnknownFeature(f"unknown feature '{name}'")


def evaluate_term(data: PanelDataset, term: str, lag_initial=None, lag_default=0.0) -> np.ndarray:
    """Evaluate one feature expression on every record."""
    lag_initial = lag_initial or {}
    term = term.strip()
    if "*" in term or ":" in term:
        parts = re.split(r"[*:]", term)
        out = np.ones(data.n_records)
        for part in parts:
            out = out * evaluate_term(data, part, lag_initial, lag_default)
        return out
    if "==" in term:
        lhs, rhs = term.split("==", 1)
        try:
            level = float(rhs)
        except ValueError as exc:
            raise UnknownFeature(f"bad indicator expression '{term}'") from exc
        return (evaluate_term(data, lhs, lag_initial, lag_default) == level).astype(float)
    if term == "1":
        return np.ones(data.n_records)
    if term == "t":
        return data.t.astype(float)
    if term in data.covariates:
        return data.covariates[term].astype(float)
    if term in ("outcome", "arm", "treated"):
        raise UnknownFeature(f"feature '{term}' refers to the current decision point; use a lag")
    m = _LAG_RE.match(term)
    if m:
        base, k = m.group("base"), int(m.group("k"))
        if k < 1:
            raise UnknownFeature(f"lag order must be positive in '{term}'")
        values = _base_values(data, base, term)
        initial = lag_initial.get(term, lag_initial.get(base, lag_default))
        return lagged(data, values, k, initial, term)
    raise UnknownFeature(f"unknown feature '{term}'")


def feature_matrix(data: PanelDataset, terms: Sequence[str], lag_initial=None, lag_default=0.0):
    if not terms:
        return np.zeros((data.n_records, 0))
    return np.column_stack([evaluate_term(data, t, lag_initial, lag_default) for t in terms])


def arm_dummies(arm: np.ndarray, k_arms: int) -> np.ndarray:
    return (np.asarray(arm)[:, None] == np.arange(1, k_arms + 1)[None, :]).astype(float)


def build_design(data: PanelDataset, spec: EffectModelSpec) -> DesignBundle:
    k = spec.k_arms or data.k_arms
    if k < data.k_arms:
        raise InvalidPanel(f"model declares {k} arms but data contain {data.k_arms}")
    mods = spec.moderator_terms
    ctrl = spec.control_terms
    S = feature_matrix(data, mods, spec.lag_initial, spec.lag_default)
    G = feature_matrix(data, ctrl, spec.lag_initial, spec.lag_default) if ctrl else None
    return DesignBundle(
        moderators=S,
        controls=G,
        availability=data.availability.astype(float),
        arm=np.asarray(data.arm),
        arm_dummies=arm_dummies(data.arm, k),
        moderator_names=mods,
        control_names=ctrl,
    )


# --------------------------------------------------------------------- summary

@dataclass(frozen=True)
class ArmSummary:
    arm: int
    count: int
    zero_proportion: float
    mean_outcome: float


@dataclass(frozen=True)
class PanelSummary:
    n: int
    t_max: int
    n_records: int
    k_arms: int
    availability_rate: float
    zero_proportion: float
    mean_outcome: float
    arms: tuple[ArmSummary, ...]

    def to_text(self) -> str:
        lines = [
            f"participants: {self.n}  decision points (max): {self.t_max}  records: {self.n_records}",
            f"availability rate: {self.availability_rate:.4f}",
            f"zero proportion: {self.zero_proportion:.4f}  mean outcome: {self.mean_outcome:.4f}",
            f"{'arm':>4} {'count':>8} {'zero':>8} {'mean':>8}",
        ]
        for a in self.arms:
            mean = "nan" if math.isnan(a.mean_outcome) else f"{a.mean_outcome:8.4f}"
            zero = "nan" if math.isnan(a.zero_proportion) else f"{a.zero_proportion:8.4f}"
            lines.append(f"{a.arm:>4} {a.count:>8} {zero:>8} {mean:>8}")
        return "\n".join(lines)


def summarize(data: PanelDataset) -> PanelSummary:
    """Zero-inflation and per-arm outcome summary over available records."""
    if data.n_records == 0:
        raise EmptyDataset("cannot summarize an empty dataset")
    y = data.outcome
    avail = data.availability == 1
    arms = []
    for a in range(data.k_arms + 1):
        sel = avail & (data.arm == a)
        cnt = int(sel.sum())
        if cnt:
            arms.append(ArmSummary(a, cnt, float(np.mean(y[sel] == 0)), float(np.mean(y[sel]))))
        else:
            arms.append(ArmSummary(a, 0, float("nan"), float("nan")))
    return PanelSummary(
        n=data.n,
        t_max=data.t_max,
        n_records=data.n_records,
        k_arms=data.k_arms,
        availability_rate=float(avail.mean()),
        zero_proportion=float(np.mean(y == 0)),
        mean_outcome=float(np.mean(y)),
        arms=tuple(arms),
    )
