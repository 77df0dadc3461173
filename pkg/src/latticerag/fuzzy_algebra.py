"""Łukasiewicz residuated lattice on [0, 1], fuzzy sets and fuzzy Galois operators.

The scalar operators are written generically so they accept ``float`` as well
as ``fractions.Fraction``; the latter gives exact arithmetic on decimal grids
where binary floating point would round (``0.1 + 0.9 - 1 != 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from numbers import Real
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "truth_value",
    "luk_tnorm",
    "luk_residuum",
    "luk_negation",
    "tnorm_array",
    "residuum_array",
    "FuzzySet",
    "FuzzyContext",
    "fuzzy_up",
    "fuzzy_down",
    "crisp_up",
    "crisp_down",
    "crisp_concepts",
    "MAX_ORACLE_CELLS",
]

MAX_ORACLE_CELLS = 400


def truth_value(value: Real) -> Real:
    """Validate ``value`` as a truth degree and return it unchanged.

    Raises:
        ValueError: if ``value`` is outside ``[0, 1]`` or NaN.
    """
    if not (0 <= value <= 1):
        raise ValueError(f"truth value must lie in [0, 1], got {value!r}")
    return value


def luk_tnorm(a: Real, b: Real) -> Real:
    """Łukasiewicz t-norm ``max(0, a + b - 1)``.

    Evaluated as ``lo - (1 - hi)``: the same value in exact arithmetic, but in
    floating point ``T(a, 1)`` returns ``a`` unchanged and the result does not
    depend on argument order.
    """
    truth_value(a)
    truth_value(b)
    lo, hi = (a, b) if a <= b else (b, a)
    return max(0 * a, lo - (1 - hi))


def luk_residuum(a: Real, b: Real) -> Real:
    """Łukasiewicz residuum ``a -> b = min(1, 1 - a + b)``."""
    truth_value(a)
    truth_value(b)
    return min(1 + 0 * a, 1 - a + b)


def luk_negation(a: Real) -> Real:
    """Involutive negation ``a -> 0 = 1 - a``."""
    truth_value(a)
    return 1 - a


def tnorm_array(a, b) -> np.ndarray:
    """Vectorised t-norm with numpy broadcasting (no range validation)."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return np.maximum(0.0, np.minimum(a, b) - (1.0 - np.maximum(a, b)))


def residuum_array(a, b) -> np.ndarray:
    """Vectorised residuum with numpy broadcasting (no range validation)."""
    return np.minimum(1.0, (1.0 - np.asarray(a, dtype=float)) + b)


@dataclass(frozen=True)
class FuzzySet:
    """A fuzzy subset of an ordered universe.

    Elements missing from ``memberships`` have membership 0.
    """

    universe: tuple
    memberships: Mapping = field(default_factory=dict)

    def __post_init__(self):
        universe = tuple(self.universe)
        object.__setattr__(self, "universe", universe)
        known = set(universe)
        if len(known) != len(universe):
            raise ValueError("universe contains duplicate elements")
        for key, value in self.memberships.items():
            if key not in known:
                raise ValueError(f"element {key!r} is not in the universe")
            truth_value(value)
        object.__setattr__(self, "memberships", dict(self.memberships))

    @classmethod
    def from_array(cls, universe: Sequence, values) -> "FuzzySet":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(universe),):
            raise ValueError(
                f"expected {len(universe)} membership values, got shape {values.shape}"
            )
        return cls(tuple(universe), {u: float(v) for u, v in zip(universe, values) if v != 0})

    def __getitem__(self, element):
        if element not in self.memberships and element not in self.universe:
            raise KeyError(element)
        return self.memberships.get(element, 0.0)

    def to_array(self) -> np.ndarray:
        return np.array([float(self.memberships.get(u, 0.0)) for u in self.universe])

    def support(self) -> list:
        return [u for u in self.universe if self.memberships.get(u, 0) > 0]

    def issubset(self, other: "FuzzySet") -> bool:
        """Pointwise ``self <= other`` over a shared universe."""
        if self.universe != other.universe:
            raise ValueError("fuzzy sets are over different universes")
        return all(self[u] <= other[u] for u in self.universe)


@dataclass(frozen=True)
class FuzzyContext:
    """Objects x attributes incidence matrix valued in [0, 1]."""

    objects: tuple
    attributes: tuple
    incidence: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        incidence = np.array(self.incidence, dtype=float)
        if incidence.ndim != 2 or incidence.shape != (len(self.objects), len(self.attributes)):
            raise ValueError(
                f"incidence shape {incidence.shape} does not match "
                f"{len(self.objects)} objects x {len(self.attributes)} attributes"
            )
        if not np.all((incidence >= 0) & (incidence <= 1)):
            raise ValueError("incidence entries must lie in [0, 1]")
        incidence.setflags(write=False)
        object.__setattr__(self, "incidence", incidence)

    @classmethod
    def from_matrix(cls, matrix) -> "FuzzyContext":
        matrix = np.asarray(matrix, dtype=float)
        return cls(tuple(range(matrix.shape[0])), tuple(range(matrix.shape[1])), matrix)

    @property
    def is_crisp(self) -> bool:
        return bool(np.all((self.incidence == 0) | (self.incidence == 1)))


def _as_values(fset, universe: tuple, what: str) -> np.ndarray:
    if isinstance(fset, FuzzySet):
        if fset.universe != universe:
            raise ValueError(f"{what} universe does not match the context")
        return fset.to_array()
    values = np.asarray(fset, dtype=float)
    if values.shape != (len(universe),):
        raise ValueError(f"{what} has length {values.shape}, context expects {len(universe)}")
    return values


def fuzzy_up(context: FuzzyContext, objects_set) -> FuzzySet:
    """Attributes shared by a fuzzy set of objects.

    ``up(A)(m) = inf_g (A(g) -> I(g, m))``; the infimum over no objects is 1.
    """
    a = _as_values(objects_set, context.objects, "object set")
    if not context.objects:
        return FuzzySet.from_array(context.attributes, np.ones(len(context.attributes)))
    values = residuum_array(a[:, None], context.incidence).min(axis=0)
    return FuzzySet.from_array(context.attributes, values)


def fuzzy_down(context: FuzzyContext, attributes_set) -> FuzzySet:
    """Objects having a fuzzy set of attributes.

    ``down(B)(g) = inf_m (B(m) -> I(g, m))``; the infimum over no attributes is 1.
    """
    b = _as_values(attributes_set, context.attributes, "attribute set")
    if not context.attributes:
        return FuzzySet.from_array(context.objects, np.ones(len(context.objects)))
    values = residuum_array(b[None, :], context.incidence).min(axis=1)
    return FuzzySet.from_array(context.objects, values)


# crisp Galois connection, used as a test oracle


def _require_crisp(context: FuzzyContext) -> None:
    if not context.is_crisp:
        raise ValueError("crisp operation requires a 0/1 incidence matrix")


def crisp_up(context: FuzzyContext, objs) -> frozenset:
    """Attributes held by every object in ``objs``."""
    _require_crisp(context)
    rows = [context.objects.index(g) for g in objs]
    return frozenset(
        m for j, m in enumerate(context.attributes)
        if all(context.incidence[i, j] == 1 for i in rows)
    )


def crisp_down(context: FuzzyContext, attrs) -> frozenset:
    """Objects holding every attribute in ``attrs``."""
    _require_crisp(context)
    cols = [context.attributes.index(m) for m in attrs]
    return frozenset(
        g for i, g in enumerate(context.objects)
        if all(context.incidence[i, j] == 1 for j in cols)
    )


def crisp_concepts(context: FuzzyContext) -> list[tuple[frozenset, frozenset]]:
    """Enumerate all formal concepts of a small 0/1 context by brute force.

    Every attribute subset ``B`` is closed to ``(B', B'')``; duplicates are
    dropped. The result is sorted by extent size then by extent element order,
    which is a linear extension of extent inclusion.

    Raises:
        ValueError: if the context is not crisp or has more than
            ``MAX_ORACLE_CELLS`` cells.
    """
    _require_crisp(context)
    n_cells = len(context.objects) * len(context.attributes)
    if n_cells > MAX_ORACLE_CELLS:
        raise ValueError(f"context has {n_cells} cells; oracle limit is {MAX_ORACLE_CELLS}")

    seen = {}
    if len(context.attributes) <= len(context.objects):
        for size in range(len(context.attributes) + 1):
            for subset in combinations(context.attributes, size):
                extent = crisp_down(context, subset)
                if extent not in seen:
                    seen[extent] = crisp_up(context, extent)
    else:
        # closing object subsets yields the same concept set
        for size in range(len(context.objects) + 1):
            for subset in combinations(context.objects, size):
                intent = crisp_up(context, subset)
                extent = crisp_down(context, intent)
                seen.setdefault(extent, intent)
    order = {g: i for i, g in enumerate(context.objects)}
    return sorted(
        seen.items(),
        key=lambda item: (len(item[0]), sorted(order[g] for g in item[0])),
    )
