"""Distortion risk measures on finite-support random variables.

Cost-side evaluation treats larger values as worse; the reward-side measure is
obtained through the sign change ``rho_plus(Z) = -rho(-Z)``.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "DistortionKind",
    "DistortionSpec",
    "DiscreteRV",
    "RiskSide",
    "ParameterError",
    "SizeError",
    "distortion_value",
    "exact_risk",
    "sample_weights",
    "weighted_estimate",
    "capacity_core_oracle",
    "core_contains",
    "CORE_ATOM_CAP",
]

CORE_ATOM_CAP = 12
# Above this many atoms the oracle stops enumerating permutation vertices.
_VERTEX_ENUM_CAP = 8


class ParameterError(ValueError):
    """Invalid parameter for a risk measure or estimator."""


class SizeError(ValueError):
    """Problem too large for an enumeration-based oracle."""


class DistortionKind(enum.Enum):
    EXPECTATION = "expectation"
    CVAR = "cvar"
    WANG = "wang"


class RiskSide(enum.Enum):
    COST = "cost"
    REWARD = "reward"


@dataclass(frozen=True)
class DistortionSpec:
    """A coherent distortion risk measure, identified by its distortion ``g``.

    ``param`` is the CVaR level alpha in (0, 1] or the Wang shift eta >= 0.
    """

    kind: DistortionKind
    param: float | None = None

    def __post_init__(self):
        if self.kind is DistortionKind.CVAR:
            if self.param is None or not (0.0 < self.param <= 1.0):
                raise ParameterError(f"CVaR level must lie in (0, 1], got {self.param!r}")
        elif self.kind is DistortionKind.WANG:
            if self.param is None or not (self.param >= 0.0) or not np.isfinite(self.param):
                raise ParameterError(f"Wang shift must be finite and >= 0, got {self.param!r}")

    @classmethod
    def expectation(cls) -> "DistortionSpec":
        return cls(DistortionKind.EXPECTATION)

    @classmethod
    def cvar(cls, alpha: float) -> "DistortionSpec":
        return cls(DistortionKind.CVAR, float(alpha))

    @classmethod
    def wang(cls, eta: float) -> "DistortionSpec":
        return cls(DistortionKind.WANG, float(eta))

    @classmethod
    def parse(cls, text: str) -> "DistortionSpec":
        """Parse ``"expectation"``, ``"cvar:0.25"`` or ``"wang:0.75"``."""
        name, _, arg = str(text).strip().partition(":")
        name = name.strip().lower()
        try:
            kind = DistortionKind(name)
        except ValueError:
            raise ParameterError(f"unknown distortion {name!r}") from None
        if kind is DistortionKind.EXPECTATION:
            if arg.strip():
                raise ParameterError("expectation takes no parameter")
            return cls.expectation()
        if not arg.strip():
            raise ParameterError(f"{name} requires a parameter, e.g. '{name}:0.5'")
        try:
            value = float(arg)
        except ValueError:
            raise ParameterError(f"bad parameter {arg!r} for {name}") from None
        return cls(kind, value)

    def __str__(self) -> str:
        if self.kind is DistortionKind.EXPECTATION:
            return "expectation"
        return f"{self.kind.value}:{self.param:g}"

    def g(self, u):
        return distortion_value(self, u)


@dataclass(frozen=True, eq=False)
class DiscreteRV:
    """Finite-support random variable; atoms need not be sorted or distinct."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        probs = np.array(self.probs, dtype=float).reshape(-1)
        if values.size == 0 or values.shape != probs.shape:
            raise ValueError("values and probs must be non-empty and of equal length")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if not np.all(probs > 0.0):
            raise ValueError("atom probabilities must be strictly positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom probabilities sum to {probs.sum()!r}, not 1")
        values.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, float]]) -> "DiscreteRV":
        atoms = list(atoms)
        return cls(np.array([v for v, _ in atoms]), np.array([p for _, p in atoms]))

    @classmethod
    def uniform(cls, values) -> "DiscreteRV":
        values = np.asarray(values, dtype=float)
        return cls(values, np.full(values.size, 1.0 / values.size))

    def __len__(self) -> int:
        return self.values.size

    def negate(self) -> "DiscreteRV":
        return DiscreteRV(-self.values, self.probs)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))


def distortion_value(spec: DistortionSpec, u):
    """Distortion function ``g(u)``; accepts scalars or arrays in [0, 1]."""
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise ValueError("distortion argument must lie in [0, 1]")
    if spec.kind is DistortionKind.EXPECTATION:
        out = arr.copy()
    elif spec.kind is DistortionKind.CVAR:
        out = np.minimum(arr / spec.param, 1.0)
    else:
        with np.errstate(divide="ignore"):
            out = special.ndtr(special.ndtri(arr) + spec.param)
        # endpoints short-circuit so ndtri never feeds +-inf forward
        out = np.where(arr <= 0.0, 0.0, np.where(arr >= 1.0, 1.0, out))
    if out.ndim == 0:
        return float(out)
    return out


def _side(side) -> RiskSide:
    return side if isinstance(side, RiskSide) else RiskSide(side)


def exact_risk(rv: DiscreteRV, spec: DistortionSpec, side: RiskSide = RiskSide.COST) -> float:
    """Evaluate the distortion risk measure exactly via the Choquet sum."""
    if not isinstance(rv, DiscreteRV):
        raise TypeError("exact_risk expects a DiscreteRV")
    return choquet(rv.values, rv.probs, spec, side)


def choquet(values: np.ndarray, probs: np.ndarray, spec: DistortionSpec, side: RiskSide = RiskSide.COST) -> float:
    """Choquet sum on raw atom arrays; inputs are trusted (see :func:`exact_risk`)."""
    if _side(side) is RiskSide.REWARD:
        return -choquet(-values, probs, spec, RiskSide.COST)
    if spec.kind is DistortionKind.EXPECTATION:
        return float(np.dot(values, probs))

    order = np.argsort(values, kind="stable")
    z = values[order]
    p = probs[order]
    # tail[k] = P(Z >= z_(k)) = 1 - F(z_(k-1)); pinned to 1 so weights telescope to g(1)
    tail = np.cumsum(p[::-1])[::-1]
    tail[0] = 1.0
    tail = np.clip(tail, 0.0, 1.0)
    g_upper = distortion_value(spec, tail)
    g_lower = np.append(g_upper[1:], 0.0)
    return float(np.dot(z, g_upper - g_lower))


def sample_weights(n: int, spec: DistortionSpec) -> np.ndarray:
    """L-statistic weights ``g(i/n) - g((i-1)/n)`` for i = 1..n."""
    if int(n) != n or n < 1:
        raise ParameterError(f"number of samples must be a positive integer, got {n!r}")
    n = int(n)
    grid = np.arange(n + 1) / n
    return np.diff(distortion_value(spec, grid))


def weighted_estimate(values, spec: DistortionSpec, side: RiskSide = RiskSide.COST) -> float:
    """Sample-based distortion risk estimate from i.i.d. draws.

    Cost side sorts descending, reward side ascending; ties keep input order.
    """
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError("weighted_estimate needs at least one value")
    w = sample_weights(arr.size, spec)
    if _side(side) is RiskSide.COST:
        order = np.argsort(-arr, kind="stable")
    else:
        order = np.argsort(arr, kind="stable")
    return float(np.dot(w, arr[order]))


@lru_cache(maxsize=None)
def _permutations(k: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.intp)
    perms.flags.writeable = False
    return perms


@lru_cache(maxsize=None)
def _subset_masks(k: int) -> np.ndarray:
    codes = np.arange(1, 2**k)
    masks = ((codes[:, None] >> np.arange(k)) & 1).astype(float)
    masks.flags.writeable = False
    return masks


def _vertex(order: np.ndarray, probs: np.ndarray, spec: DistortionSpec) -> np.ndarray:
    """Greedy core vertex for the atom ordering ``order`` (batched over rows)."""
    prefix = np.clip(np.cumsum(probs[order], axis=-1), 0.0, 1.0)
    prefix[..., -1] = 1.0
    g = distortion_value(spec, prefix)
    inc = np.diff(g, axis=-1, prepend=0.0)
    beta = np.empty_like(inc)
    np.put_along_axis(beta, order, inc, axis=-1)
    return beta


def core_contains(beta, rv: DiscreteRV, spec: DistortionSpec, tol: float = 1e-12) -> bool:
    """Check ``beta`` against every subset constraint of the distortion capacity."""
    beta = np.asarray(beta, dtype=float)
    k = len(rv)
    if k > CORE_ATOM_CAP:
        raise SizeError(f"{k} atoms exceeds the subset-enumeration cap of {CORE_ATOM_CAP}")
    if beta.shape != (k,) or np.any(beta < -tol) or abs(beta.sum() - 1.0) > 1e-9:
        return False
    masks = _subset_masks(k)
    cap = distortion_value(spec, np.clip(masks @ rv.probs, 0.0, 1.0))
    return bool(np.all(masks @ beta <= cap + tol))


def capacity_core_oracle(rv: DiscreteRV, spec: DistortionSpec, side: RiskSide = RiskSide.COST) -> float:
    """Optimise ``E_beta[Z]`` over the core of the capacity ``S -> g(P(S))``.

    The core of a concave distortion of a probability is a polytope whose
    vertices are the greedy reweightings along atom orderings. Up to eight
    atoms every vertex is enumerated; beyond that the value-ordered greedy
    vertex is used after verifying it against every subset constraint.
    Cost side returns the supremum, reward side the infimum.
    """
    k = len(rv)
    if k > CORE_ATOM_CAP:
        raise SizeError(f"{k} atoms exceeds the oracle cap of {CORE_ATOM_CAP}")
    cost = _side(side) is RiskSide.COST
    z = rv.values
    if k <= _VERTEX_ENUM_CAP:
        betas = _vertex(_permutations(k), rv.probs, spec)
        vals = betas @ z
        return float(vals.max() if cost else vals.min())

    order = np.argsort(-z if cost else z, kind="stable")
    beta = _vertex(order, rv.probs, spec)
    if not core_contains(beta, rv, spec, tol=1e-10):
        raise ArithmeticError("greedy reweighting violates the capacity core")
    return float(beta @ z)
