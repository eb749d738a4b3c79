"""Risk-averse model-uncertainty Bellman operators.

The exact operators act on finite rectangular mixtures; ``sampled_targets``
is the weighted-sort estimator used by the learner. ``dr_bellman_oracle``
evaluates the same quantity as a worst case over reweightings of the mixture
and exists only to check the exact path.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .cmdp import (
    ModelMixture,
    Policy,
    QTable,
    TabularCMDP,
    ValueKind,
    iterate_to_fixed_point,
    state_values,
)
from .risk import (
    CORE_ATOM_CAP,
    DiscreteRV,
    DistortionKind,
    DistortionSpec,
    choquet,
    RiskSide,
    SizeError,
    capacity_core_oracle,
    exact_risk,
    sample_weights,
)

__all__ = [
    "side_for",
    "target_rv",
    "ramu_bellman_exact",
    "ramu_bellman_operator",
    "ramu_policy_evaluation",
    "ramu_return",
    "dr_bellman_oracle",
    "sampled_targets",
    "contraction_probe",
]


def side_for(kind: ValueKind) -> RiskSide:
    """Rewards use the sign-flipped measure, costs the measure itself."""
    return RiskSide.REWARD if ValueKind(kind) is ValueKind.REWARD else RiskSide.COST


def target_rv(Q: QTable, cmdp: TabularCMDP, pi: Policy, mix: ModelMixture, s: int, a: int, v=None) -> DiscreteRV:
    """Standard Bellman targets at ``(s, a)`` as a random variable over models."""
    rows, probs = mix.at(s, a)
    if v is None:
        v = state_values(Q, pi)
    targets = cmdp.immediate(Q.kind)[s, a] + cmdp.gamma * (rows @ v)
    return DiscreteRV(targets, probs)


def ramu_bellman_exact(Q: QTable, cmdp: TabularCMDP, pi: Policy, mix: ModelMixture, spec: DistortionSpec, s: int, a: int) -> float:
    return exact_risk(target_rv(Q, cmdp, pi, mix, s, a), spec, side_for(Q.kind))


def ramu_bellman_operator(Q: QTable, cmdp: TabularCMDP, pi: Policy, mix: ModelMixture, spec: DistortionSpec) -> QTable:
    v = state_values(Q, pi)
    side = side_for(Q.kind)
    imm = cmdp.immediate(Q.kind)
    out = np.empty((cmdp.nS, cmdp.nA))
    for s in range(cmdp.nS):
        for a in range(cmdp.nA):
            rows, probs = mix.at(s, a)
            out[s, a] = choquet(imm[s, a] + cmdp.gamma * (rows @ v), probs, spec, side)
    return QTable(out, Q.kind)


def ramu_policy_evaluation(
    cmdp: TabularCMDP,
    pi: Policy,
    mix: ModelMixture,
    spec: DistortionSpec,
    kind: ValueKind,
    tol: float = 1e-10,
) -> QTable:
    kind = ValueKind(kind)
    if not mix.compatible(cmdp):
        raise ValueError("model mixture does not match the CMDP shape")
    if spec.kind is DistortionKind.EXPECTATION:
        # the risk-neutral operator is the standard one under the mean model
        imm, p = cmdp.immediate(kind), mix.mean_model()

        def op(q):
            return imm + cmdp.gamma * (p @ np.einsum("sa,sa->s", pi.table, q))

    else:

        def op(q):
            return ramu_bellman_operator(QTable(q, kind), cmdp, pi, mix, spec).values

    return QTable(iterate_to_fixed_point(op, np.zeros((cmdp.nS, cmdp.nA)), cmdp.gamma, tol), kind)


def ramu_return(cmdp, pi, mix, spec, kind, tol: float = 1e-10, Q: QTable | None = None) -> float:
    """Risk-averse objective or constraint value averaged over ``d0`` and ``pi``."""
    if Q is None:
        Q = ramu_policy_evaluation(cmdp, pi, mix, spec, kind, tol)
    return float(cmdp.d0 @ state_values(Q, pi))


def dr_bellman_oracle(
    Q: QTable,
    cmdp: TabularCMDP,
    pi: Policy,
    mix: ModelMixture,
    spec: DistortionSpec,
    kind: ValueKind,
    s: int,
    a: int,
) -> float:
    """Worst-case expected Bellman target over the reweighting set of ``mu_{s,a}``."""
    if mix.support(s, a) > CORE_ATOM_CAP:
        raise SizeError(f"mixture support {mix.support(s, a)} at ({s}, {a}) exceeds {CORE_ATOM_CAP}")
    Q = QTable(Q.values, kind)
    return capacity_core_oracle(target_rv(Q, cmdp, pi, mix, s, a), spec, side_for(kind))


def sampled_targets(immediate, next_values, spec: DistortionSpec, kind: ValueKind, gamma: float, n: int) -> np.ndarray:
    """Weighted-sort Bellman targets for a batch.

    ``next_values[b, i]`` is ``E_{a'~pi} Q(s'_i, a')`` for the i-th sampled
    model of element ``b``. Per element the n one-sample targets are sorted
    (descending for costs, ascending for rewards, stable in sample index) and
    combined with the distortion weights.
    """
    imm = np.asarray(immediate, dtype=float).reshape(-1)
    nv = np.asarray(next_values, dtype=float)
    if nv.ndim != 2 or nv.shape[0] != imm.size:
        raise ValueError("next_values must be (batch, n) matching the immediate batch")
    if nv.shape[1] != n:
        raise ValueError(f"expected {n} next-state samples per element, got {nv.shape[1]}")
    targets = imm[:, None] + gamma * nv
    if side_for(kind) is RiskSide.COST:
        order = np.argsort(-targets, axis=1, kind="stable")
    else:
        order = np.argsort(targets, axis=1, kind="stable")
    ranked = np.take_along_axis(targets, order, axis=1)
    return (ranked * sample_weights(n, spec)).sum(axis=1)


def contraction_probe(operator: Callable[[np.ndarray], np.ndarray], q1, q2) -> float:
    """``||T q1 - T q2||_inf / ||q1 - q2||_inf``, or 0 when ``q1 == q2``."""
    q1, q2 = np.asarray(q1, dtype=float), np.asarray(q2, dtype=float)
    if q1.shape != q2.shape:
        raise ValueError("probe arguments must share a shape")
    den = np.max(np.abs(q1 - q2)) if q1.size else 0.0
    if den == 0.0:
        return 0.0
    num = np.max(np.abs(np.asarray(operator(q1)) - np.asarray(operator(q2))))
    return float(num / den)
