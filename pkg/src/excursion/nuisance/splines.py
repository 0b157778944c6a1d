"""P-spline bases and additive design matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import null_space


@dataclass(frozen=True)
class SplineBasis:
    """Cubic B-spline basis on equally spaced knots with a difference penalty.

    Inputs outside the training range are clamped to the boundary, so the
    fitted smooth extends as a constant.
    """

    feature: str
    knots: np.ndarray
    degree: int = 3
    penalty_order: int = 2
    n_basis: int = 10

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if self.n_basis < self.degree + 1:
            raise ValueError("basis size must be at least degree + 1")
        if len(knots) != self.n_basis + self.degree + 1:
            raise ValueError("knot vector length must equal n_basis + degree + 1")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def from_data(cls, feature, x, n_basis=10, degree=3, penalty_order=2):
        x = np.asarray(x, dtype=float)
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            raise ValueError(f"feature '{feature}' is constant; cannot build a spline basis")
        n_inner = n_basis - degree
        h = (hi - lo) / n_inner
        knots = lo + h * np.arange(-degree, n_inner + degree + 1)
        knots[degree] = lo
        knots[-degree - 1] = hi
        return cls(feature, knots, degree, penalty_order, n_basis)

    @property
    def lower(self) -> float:
        return float(self.knots[self.degree])

    @property
    def upper(self) -> float:
        return float(self.knots[-self.degree - 1])

    def basis(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def penalty(self) -> np.ndarray:
        D = np.diff(np.eye(self.n_basis), n=self.penalty_order, axis=0)
        return D.T @ D


@dataclass
class SmoothTerm:
    basis: SplineBasis
    constraint: np.ndarray  # (n_basis, n_basis - 1) sum-to-zero reparametrisation

    @property
    def width(self) -> int:
        return self.constraint.shape[1]

    def columns(self, x):
        return self.basis.basis(x) @ self.constraint

    def penalty(self):
        Z = self.constraint
        S = Z.T @ self.basis.penalty() @ Z
        return (S + S.T) / 2


@dataclass
class CategoricalTerm:
    feature: str
    levels: np.ndarray  # levels[0] is the reference

    @property
    def width(self) -> int:
        return len(self.levels) - 1

    def columns(self, x):
        x = np.asarray(x, dtype=float)
        return (x[:, None] == self.levels[None, 1:]).astype(float)


@dataclass
class LinearTerm:
    feature: str

    width: int = 1

    def columns(self, x):
        return np.asarray(x, dtype=float)[:, None]


@dataclass
class AdditiveDesign:
    """Intercept plus one block per feature.

    Categorical features are one-hot encoded against their first level,
    features with few distinct values enter linearly, the rest as centred
    P-splines.
    """

    terms: list = field(default_factory=list)

    @classmethod
    def from_data(cls, features: Mapping[str, np.ndarray], names: Sequence[str],
                  categorical=(), n_basis=10, degree=3, penalty_order=2):
        terms = []
        for name in names:
            x = np.asarray(features[name], dtype=float)
            uniq = np.unique(x)
            if name in categorical:
                if len(uniq) > 1:
                    terms.append(CategoricalTerm(name, uniq))
            elif len(uniq) <= 1:
                continue
            elif len(uniq) <= degree + 1:
                terms.append(LinearTerm(name))
            else:
                basis = SplineBasis.from_data(name, x, n_basis, degree, penalty_order)
                means = basis.basis(x).mean(axis=0, keepdims=True)
                terms.append(SmoothTerm(basis, null_space(means)))
        return cls(terms)

    @property
    def width(self) -> int:
        return 1 + sum(t.width for t in self.terms)

    def matrix(self, features: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        if n is None:
            n = len(next(iter(features.values()))) if features else 0
        cols = [np.ones((n, 1))]
        for term in self.terms:
            name = term.basis.feature if isinstance(term, SmoothTerm) else term.feature
            cols.append(term.columns(features[name]))
        return np.hstack(cols)

    def penalty_blocks(self):
        """List of ``(column slice, penalty matrix)`` for the smooth terms."""
        blocks = []
        start = 1
        for term in self.terms:
            if isinstance(term, SmoothTerm):
                blocks.append((slice(start, start + term.width), term.penalty()))
            start += term.width
        return blocks

    # serialisation helpers
    def to_dict(self):
        out = []
        for term in self.terms:
            if isinstance(term, SmoothTerm):
                b = term.basis
                out.append({"kind": "spline", "feature": b.feature, "knots": b.knots.tolist(),
                            "degree": b.degree, "penalty_order": b.penalty_order,
                            "n_basis": b.n_basis, "constraint": term.constraint.tolist()})
            elif isinstance(term, CategoricalTerm):
                out.append({"kind": "categorical", "feature": term.feature,
                            "levels": term.levels.tolist()})
            else:
                out.append({"kind": "linear", "feature": term.feature})
        return out

    @classmethod
    def from_dict(cls, items):
        terms = []
        for d in items:
            if d["kind"] == "spline":
                basis = SplineBasis(d["feature"], np.array(d["knots"]), d["degree"],
                                    d["penalty_order"], d["n_basis"])
                terms.append(SmoothTerm(basis, np.array(d["constraint"])))
            elif d["kind"] == "categorical":
                terms.append(CategoricalTerm(d["feature"], np.array(d["levels"], dtype=float)))
            else:
                terms.append(LinearTerm(d["feature"]))
        return cls(terms)
