"""Tabular constrained MDPs, rectangular model mixtures and standard evaluation."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ValueKind",
    "TabularCMDP",
    "Policy",
    "QTable",
    "ModelMixture",
    "state_values",
    "standard_bellman",
    "bellman_operator",
    "policy_evaluation",
    "exact_return",
    "solve_linear",
    "save_cmdp",
    "load_cmdp",
]

_ROW_TOL = 1e-12


class ValueKind(enum.Enum):
    REWARD = "reward"
    COST = "cost"


def _check_rows(arr: np.ndarray, what: str) -> None:
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has negative or non-finite entries")
    bad = np.abs(arr.sum(axis=-1) - 1.0) > _ROW_TOL
    if np.any(bad):
        raise ValueError(f"{what} rows must sum to 1 (offending index {np.argwhere(bad)[0].tolist()})")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TabularCMDP:
    """Finite CMDP ``(p, r, c, d0, gamma)`` with safety budget ``budget``.

    ``p`` has shape (nS, nA, nS); ``r`` and ``c`` have shape (nS, nA).
    """

    p: np.ndarray
    r: np.ndarray
    c: np.ndarray
    d0: np.ndarray
    gamma: float
    budget: float = 0.0

    def __post_init__(self):
        p = _frozen(self.p)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition tensor must be (nS, nA, nS), got {p.shape}")
        nS, nA = p.shape[:2]
        r, c, d0 = _frozen(self.r), _frozen(self.c), _frozen(self.d0)
        if r.shape != (nS, nA) or c.shape != (nS, nA):
            raise ValueError("reward/cost tables must be (nS, nA)")
        if d0.shape != (nS,):
            raise ValueError("initial distribution must have nS entries")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
            raise ValueError("reward/cost tables must be finite")
        _check_rows(p, "transition tensor")
        _check_rows(d0, "initial distribution")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.budget < 0.0:
            raise ValueError("budget must be non-negative")
        for name, val in (("p", p), ("r", r), ("c", c), ("d0", d0)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def nS(self) -> int:
        return self.p.shape[0]

    @property
    def nA(self) -> int:
        return self.p.shape[1]

    def immediate(self, kind: ValueKind) -> np.ndarray:
        return self.r if ValueKind(kind) is ValueKind.REWARD else self.c

    def to_dict(self) -> dict:
        return {
            "states": self.nS,
            "actions": self.nA,
            "gamma": self.gamma,
            "budget": self.budget,
            "p": self.p.reshape(-1).tolist(),
            "r": self.r.reshape(-1).tolist(),
            "c": self.c.reshape(-1).tolist(),
            "d0": self.d0.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularCMDP":
        nS, nA = int(data["states"]), int(data["actions"])
        return cls(
            p=np.reshape(data["p"], (nS, nA, nS)),
            r=np.reshape(data["r"], (nS, nA)),
            c=np.reshape(data["c"], (nS, nA)),
            d0=np.asarray(data["d0"]),
            gamma=data["gamma"],
            budget=data.get("budget", 0.0),
        )


def save_cmdp(cmdp: TabularCMDP, path) -> None:
    # repr-exact floats via json keep the round trip lossless
    Path(path).write_text(json.dumps(cmdp.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_cmdp(path) -> TabularCMDP:
    return TabularCMDP.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary stochastic policy; ``table[s]`` is a distribution over actions."""

    table: np.ndarray

    def __post_init__(self):
        table = _frozen(self.table)
        if table.ndim != 2:
            raise ValueError("policy table must be (nS, nA)")
        if np.any(table < 0.0) or np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("policy rows must be distributions")
        object.__setattr__(self, "table", table)

    @classmethod
    def uniform(cls, nS: int, nA: int) -> "Policy":
        return cls(np.full((nS, nA), 1.0 / nA))

    @classmethod
    def deterministic(cls, actions, nA: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        table = np.zeros((actions.size, nA))
        table[np.arange(actions.size), actions] = 1.0
        return cls(table)

    @property
    def nS(self) -> int:
        return self.table.shape[0]

    @property
    def nA(self) -> int:
        return self.table.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.table == 0.0) | (self.table == 1.0)))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.table, axis=1)


@dataclass
class QTable:
    values: np.ndarray
    kind: ValueKind

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.kind = ValueKind(self.kind)
        if self.values.ndim != 2:
            raise ValueError("Q table must be (nS, nA)")

    @classmethod
    def zeros(cls, nS: int, nA: int, kind: ValueKind) -> "QTable":
        return cls(np.zeros((nS, nA)), kind)


@dataclass(frozen=True, eq=False)
class ModelMixture:
    """Rectangular distribution over transition models.

    ``rows[s][a]`` is an (M, nS) array of candidate transition rows for the
    pair and ``probs[s][a]`` their mixture weights; pairs are independent.
    """

    rows: tuple
    probs: tuple

    def __post_init__(self):
        rows, probs = [], []
        for s, (rs, ps) in enumerate(zip(self.rows, self.probs)):
            rrow, prow = [], []
            for a, (rr, pp) in enumerate(zip(rs, ps)):
                rr, pp = _frozen(rr), _frozen(pp).reshape(-1)
                if rr.ndim != 2 or rr.shape[0] != pp.size or pp.size == 0:
                    raise ValueError(f"mixture at ({s}, {a}) must be (M, nS) rows with M weights")
                if np.any(pp <= 0.0) or abs(pp.sum() - 1.0) > _ROW_TOL:
                    raise ValueError(f"mixture weights at ({s}, {a}) must be positive and sum to 1")
                _check_rows(rr, f"mixture rows at ({s}, {a})")
                rrow.append(rr)
                prow.append(pp)
            rows.append(tuple(rrow))
            probs.append(tuple(prow))
        object.__setattr__(self, "rows", tuple(rows))
        object.__setattr__(self, "probs", tuple(probs))

    @classmethod
    def degenerate(cls, cmdp: TabularCMDP) -> "ModelMixture":
        return cls(
            tuple(tuple(cmdp.p[s, a][None, :] for a in range(cmdp.nA)) for s in range(cmdp.nS)),
            tuple(tuple(np.ones(1) for _ in range(cmdp.nA)) for _ in range(cmdp.nS)),
        )

    @classmethod
    def from_arrays(cls, rows, probs) -> "ModelMixture":
        """Build from dense (nS, nA, M, nS) rows and (nS, nA, M) weights."""
        rows, probs = np.asarray(rows, dtype=float), np.asarray(probs, dtype=float)
        return cls(
            tuple(tuple(rows[s, a] for a in range(rows.shape[1])) for s in range(rows.shape[0])),
            tuple(tuple(probs[s, a] for a in range(rows.shape[1])) for s in range(rows.shape[0])),
        )

    def at(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.rows[s][a], self.probs[s][a]
        except IndexError:
            raise KeyError(f"mixture undefined at ({s}, {a})") from None

    def support(self, s: int, a: int) -> int:
        return self.at(s, a)[1].size

    def mean_model(self) -> np.ndarray:
        return np.array([[pp @ rr for rr, pp in zip(rs, ps)] for rs, ps in zip(self.rows, self.probs)])

    def sample_model(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one transition tensor, independently per pair."""
        return np.array(
            [[rr[rng.choice(pp.size, p=pp)] for rr, pp in zip(rs, ps)] for rs, ps in zip(self.rows, self.probs)]
        )

    def compatible(self, cmdp: TabularCMDP) -> bool:
        return len(self.rows) == cmdp.nS and all(
            len(rs) == cmdp.nA and all(rr.shape[1] == cmdp.nS for rr in rs) for rs in self.rows
        )


def _q_values(Q) -> np.ndarray:
    return Q.values if isinstance(Q, QTable) else np.asarray(Q, dtype=float)


def state_values(Q, pi: Policy) -> np.ndarray:
    """``V(s) = sum_a pi(a|s) Q(s, a)``."""
    q = _q_values(Q)
    if q.shape != pi.table.shape:
        raise ValueError(f"Q shape {q.shape} does not match policy shape {pi.table.shape}")
    return np.einsum("sa,sa->s", pi.table, q)


def standard_bellman(Q: QTable, cmdp: TabularCMDP, pi: Policy, s: int, a: int, row=None) -> float:
    """Standard Bellman target at ``(s, a)`` under transition row ``row``.

    ``row`` defaults to ``cmdp.p[s, a]``; the immediate table follows ``Q.kind``.
    """
    q = _q_values(Q)
    if q.shape != (cmdp.nS, cmdp.nA):
        raise ValueError(f"Q shape {q.shape} does not match CMDP ({cmdp.nS}, {cmdp.nA})")
    row = cmdp.p[s, a] if row is None else np.asarray(row, dtype=float)
    if row.shape != (cmdp.nS,):
        raise ValueError("transition row must have nS entries")
    v = state_values(q, pi)
    return float(cmdp.immediate(Q.kind)[s, a] + cmdp.gamma * np.dot(row, v))


def bellman_operator(Q: QTable, cmdp: TabularCMDP, pi: Policy, p=None) -> QTable:
    """Apply the standard Bellman operator at every pair (optionally under ``p``)."""
    p = cmdp.p if p is None else np.asarray(p, dtype=float)
    v = state_values(Q, pi)
    return QTable(cmdp.immediate(Q.kind) + cmdp.gamma * (p @ v), Q.kind)


def iterate_to_fixed_point(operator, q0: np.ndarray, gamma: float, tol: float, max_iter: int = 1_000_000) -> np.ndarray:
    """Iterate a gamma-contraction until ``||Q* - Q|| <= tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = q0
    if gamma == 0.0:
        return operator(q)
    threshold = tol * (1.0 - gamma) / gamma
    for _ in range(max_iter):
        q_next = operator(q)
        delta = np.max(np.abs(q_next - q)) if q.size else 0.0
        q = q_next
        if delta <= threshold:
            return q
    raise RuntimeError("fixed-point iteration did not converge")


def policy_evaluation(cmdp: TabularCMDP, pi: Policy, kind: ValueKind, tol: float = 1e-10) -> QTable:
    kind = ValueKind(kind)
    imm = cmdp.immediate(kind)

    def op(q):
        return imm + cmdp.gamma * (cmdp.p @ np.einsum("sa,sa->s", pi.table, q))

    return QTable(iterate_to_fixed_point(op, np.zeros((cmdp.nS, cmdp.nA)), cmdp.gamma, tol), kind)


def solve_linear(cmdp: TabularCMDP, pi: Policy, kind: ValueKind, p=None) -> QTable:
    """Closed-form evaluation ``(I - gamma P_pi)^{-1}``; used as an independent check."""
    kind = ValueKind(kind)
    p = cmdp.p if p is None else np.asarray(p, dtype=float)
    nS, nA = cmdp.nS, cmdp.nA
    # pair-to-pair transition matrix under pi
    m = np.einsum("sat,tb->satb", p, pi.table).reshape(nS * nA, nS * nA)
    q = np.linalg.solve(np.eye(nS * nA) - cmdp.gamma * m, cmdp.immediate(kind).reshape(-1))
    return QTable(q.reshape(nS, nA), kind)


def exact_return(cmdp: TabularCMDP, pi: Policy, kind: ValueKind, tol: float = 1e-10, Q: QTable | None = None) -> float:
    """``J(pi) = sum_s d0(s) sum_a pi(a|s) Q(s, a)``."""
    if Q is None:
        Q = policy_evaluation(cmdp, pi, kind, tol)
    return float(cmdp.d0 @ state_values(Q, pi))
