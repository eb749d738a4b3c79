"""Safe RL with risk-averse model uncertainty on tabular / gridded critics.

Critic targets come from :func:`ramu.bellman.sampled_targets` over next
states generated by latent perturbations of replayed transitions. Policy
updates follow the CRPO switching rule: improve rewards while the batch
constraint estimate is within budget, otherwise reduce costs.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bellman import ramu_policy_evaluation, ramu_return, sampled_targets
from .cmdp import ModelMixture, Policy, TabularCMDP, ValueKind
from .perturb import LatentPerturbation, expand_batch
from .risk import DistortionSpec

__all__ = [
    "StateGrid",
    "ReplayBuffer",
    "Batch",
    "LearnerConfig",
    "Critics",
    "TabularAgent",
    "TrainResult",
    "critic_update",
    "crpo_update",
    "train",
    "ExactSolution",
    "solve_exact",
]

METHODS = ("ramu", "safe_rl")


class StateGrid:
    """Uniform grid of value nodes over a state box.

    ``index`` maps states to the nearest node; ``interpolate`` reads a node
    table at arbitrary states by multilinear interpolation (clipped to the box).
    """

    def __init__(self, low: Sequence[float], high: Sequence[float], shape: Sequence[int]):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.shape = tuple(int(n) for n in shape)
        if not (self.low.shape == self.high.shape == (len(self.shape),)):
            raise ValueError("grid bounds and shape must agree in dimension")
        if any(n < 1 for n in self.shape) or np.any(self.high < self.low):
            raise ValueError("invalid grid")
        self.dim = len(self.shape)
        self.size = int(np.prod(self.shape))
        span = np.where(self.high > self.low, self.high - self.low, 1.0)
        self._scale = (np.array(self.shape) - 1) / span
        self._strides = np.array([int(np.prod(self.shape[i + 1:])) for i in range(self.dim)])

    @classmethod
    def for_env(cls, env) -> "StateGrid":
        low, high = env.state_box
        return cls(low, high, env.grid_shape)

    def _coords(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.dim:
            raise ValueError(f"states must have {self.dim} coordinates")
        u = (np.clip(states, self.low, self.high) - self.low) * self._scale
        return np.clip(u, 0.0, np.array(self.shape) - 1)

    def index(self, states) -> np.ndarray:
        nearest = np.rint(self._coords(states)).astype(np.intp)
        return nearest @ self._strides

    def interpolate(self, table: np.ndarray, states) -> np.ndarray:
        u = self._coords(states)
        base = np.minimum(np.floor(u).astype(np.intp), np.maximum(np.array(self.shape) - 2, 0))
        frac = u - base
        out = np.zeros(u.shape[:-1])
        for corner in itertools.product((0, 1), repeat=self.dim):
            corner = np.array(corner)
            if np.any((corner == 1) & (np.array(self.shape) == 1)):
                continue
            w = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=-1)
            out = out + w * table[(base + corner) @ self._strides]
        return out


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray

    def __len__(self) -> int:
        return self.a.size


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.s_next = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.intp)
        self.r = np.zeros(capacity)
        self.c = np.zeros(capacity)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, c, s_next) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.c[i], self.s_next[i] = s, a, r, c, s_next
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def all(self) -> Batch:
        idx = (np.arange(self.size) + (self._next - self.size)) % self.capacity
        return self._take(idx)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample without replacement (the whole buffer if smaller)."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return self._take(idx)

    def _take(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.c[idx], self.s_next[idx])


def _spec(value) -> DistortionSpec:
    return value if isinstance(value, DistortionSpec) else DistortionSpec.parse(value)


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters of the training loop.

    ``budget`` is the discounted budget used by the CRPO switch; the episodic
    budget checked at evaluation time lives on the environment.
    """

    method: str = "ramu"
    objective_risk: DistortionSpec = DistortionSpec.wang(0.75)
    constraint_risk: DistortionSpec = DistortionSpec.wang(0.75)
    n: int = 5
    epsilon: float = 0.10
    gamma: float = 0.95
    budget: float = 1.0
    batch_size: int = 64
    critic_lr: float = 0.2
    updates_per_iteration: int = 1
    steps_per_iteration: int = 1
    total_steps: int = 20_000
    tau: float = 0.05
    policy_step: float = 0.05
    temperature: float = 0.05
    buffer_capacity: int = 100_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objective_risk", _spec(self.objective_risk))
        object.__setattr__(self, "constraint_risk", _spec(self.constraint_risk))
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        positive = ("n", "batch_size", "updates_per_iteration", "steps_per_iteration", "buffer_capacity", "temperature")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epsilon", "budget", "critic_lr", "total_steps", "tau", "policy_step"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.tau > 1 or self.policy_step > 1:
            raise ValueError("tau and policy_step must be <= 1")

    def replace(self, **changes) -> "LearnerConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Critics:
    reward: np.ndarray
    cost: np.ndarray
    reward_target: np.ndarray
    cost_target: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "Critics":
        z = np.zeros((n_states, n_actions))
        return cls(z.copy(), z.copy(), z.copy(), z.copy())

    def copy(self) -> "Critics":
        return Critics(self.reward.copy(), self.cost.copy(), self.reward_target.copy(), self.cost_target.copy())


def _values(q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sa->s", pi, q)


def critic_update(
    batch: Batch,
    critics: Critics,
    pi: np.ndarray,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    grid: StateGrid,
    pert: LatentPerturbation | None = None,
) -> tuple[Critics, dict]:
    """One temporal-difference step on both critics; returns new critics and losses.

    Each table entry moves toward the mean of its batch targets at rate
    ``critic_lr``; target tables then track the critics as an exponential
    moving average.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    v_r = _values(critics.reward_target, pi)
    v_c = _values(critics.cost_target, pi)
    if cfg.method == "safe_rl":
        y_r = batch.r + cfg.gamma * grid.interpolate(v_r, batch.s_next)
        y_c = batch.c + cfg.gamma * grid.interpolate(v_c, batch.s_next)
    else:
        if pert is None:
            pert = LatentPerturbation(cfg.epsilon, grid.dim, tuple(grid.low), tuple(grid.high))
        next_states = expand_batch(batch.s, batch.s_next, pert, cfg.n, rng)
        y_r = sampled_targets(batch.r, grid.interpolate(v_r, next_states), cfg.objective_risk, ValueKind.REWARD, cfg.gamma, cfg.n)
        y_c = sampled_targets(batch.c, grid.interpolate(v_c, next_states), cfg.constraint_risk, ValueKind.COST, cfg.gamma, cfg.n)

    idx = grid.index(batch.s)
    out = critics.copy()
    res_r = y_r - critics.reward[idx, batch.a]
    res_c = y_c - critics.cost[idx, batch.a]
    # entries hit several times in one batch move by the mean residual, so the
    # step never exceeds critic_lr of the way to the averaged target
    counts = np.zeros_like(critics.reward)
    np.add.at(counts, (idx, batch.a), 1.0)
    step = cfg.critic_lr / counts[idx, batch.a]
    np.add.at(out.reward, (idx, batch.a), step * res_r)
    np.add.at(out.cost, (idx, batch.a), step * res_c)
    out.reward_target = (1.0 - cfg.tau) * critics.reward_target + cfg.tau * out.reward
    out.cost_target = (1.0 - cfg.tau) * critics.cost_target + cfg.tau * out.cost
    return out, {"reward_loss": float(np.mean(res_r**2)), "cost_loss": float(np.mean(res_c**2))}


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def crpo_update(critics: Critics, pi: np.ndarray, cfg: LearnerConfig, batch: Batch, grid: StateGrid) -> tuple[np.ndarray, str, float]:
    """CRPO switch on the batch constraint estimate, then a softmax-greedy step.

    Returns the new policy table, the branch taken (``"reward"`` or
    ``"cost"``) and the constraint estimate.
    """
    idx = grid.index(batch.s)
    estimate = float(np.mean(np.einsum("ba,ba->b", pi[idx], critics.cost[idx])))
    rows = np.unique(idx)
    if estimate <= cfg.budget:
        branch, scores = "reward", critics.reward[rows] / cfg.temperature
    else:
        branch, scores = "cost", -critics.cost[rows] / cfg.temperature
    new = pi.copy()
    mixed = (1.0 - cfg.policy_step) * pi[rows] + cfg.policy_step * _softmax(scores)
    new[rows] = mixed / mixed.sum(axis=1, keepdims=True)
    return new, branch, estimate


class TabularAgent:
    """Samples actions from a policy table indexed by grid node."""

    def __init__(self, table: np.ndarray, grid: StateGrid):
        self.table = np.asarray(table, dtype=float)
        self.grid = grid
        self._cum = np.cumsum(self.table, axis=1)
        self._cum[:, -1] = 1.0

    def __call__(self, state, rng: np.random.Generator) -> int:
        row = self._cum[int(self.grid.index(state))]
        return int(np.searchsorted(row, rng.random(), side="right"))


@dataclass
class TrainResult:
    policy: np.ndarray
    critics: Critics
    grid: StateGrid
    log: list = field(default_factory=list)

    def agent(self) -> TabularAgent:
        return TabularAgent(self.policy, self.grid)


LOG_FIELDS = ("iteration", "env_steps", "reward_estimate", "cost_estimate", "branch", "cost_branches", "reward_loss", "cost_loss")


def train(env, cfg: LearnerConfig) -> TrainResult:
    """Collect data with the current policy and interleave critic and CRPO updates.

    Data collection, minibatch sampling and latent draws use independent
    streams spawned from ``cfg.seed`` so the risk-neutral single-sample case
    consumes randomness exactly like plain safe RL.
    """
    grid = StateGrid.for_env(env)
    env_rng, batch_rng, latent_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    pert = LatentPerturbation(cfg.epsilon, grid.dim, tuple(grid.low), tuple(grid.high))
    pi = np.full((grid.size, env.n_actions), 1.0 / env.n_actions)
    critics = Critics.zeros(grid.size, env.n_actions)
    buffer = ReplayBuffer(cfg.buffer_capacity, grid.dim)
    result = TrainResult(pi, critics, grid)

    state, t = env.reset(env_rng), 0
    env_steps = 0
    for it in range(cfg.total_steps // cfg.steps_per_iteration):
        agent = TabularAgent(pi, grid)
        for _ in range(cfg.steps_per_iteration):
            a = agent(state, env_rng)
            s2, r, c, done = env.step(state, a, env_rng)
            buffer.add(state, a, r, c, s2)
            env_steps += 1
            t += 1
            state = s2
            if done or t >= env.horizon:
                state, t = env.reset(env_rng), 0

        losses_r, losses_c, branches, estimates = [], [], [], []
        for _ in range(cfg.updates_per_iteration):
            batch = buffer.sample(cfg.batch_size, batch_rng)
            critics, losses = critic_update(batch, critics, pi, cfg, latent_rng, grid, pert)
            pi, branch, estimate = crpo_update(critics, pi, cfg, batch, grid)
            losses_r.append(losses["reward_loss"])
            losses_c.append(losses["cost_loss"])
            branches.append(branch)
            estimates.append(estimate)
        idx = grid.index(batch.s)
        result.log.append(
            {
                "iteration": it,
                "env_steps": env_steps,
                "reward_estimate": float(np.mean(np.einsum("ba,ba->b", pi[idx], critics.reward[idx]))),
                "cost_estimate": estimates[-1],
                "branch": branches[-1],
                "cost_branches": branches.count("cost"),
                "reward_loss": float(np.mean(losses_r)),
                "cost_loss": float(np.mean(losses_c)),
            }
        )
    result.policy, result.critics = pi, critics
    return result


@dataclass
class ExactSolution:
    policy: Policy
    feasible: bool
    reward_value: float
    cost_value: float
    iterations: int


def _evaluate(cmdp, pi, mix, specs, tol):
    q_r = ramu_policy_evaluation(cmdp, pi, mix, specs[0], ValueKind.REWARD, tol)
    q_c = ramu_policy_evaluation(cmdp, pi, mix, specs[1], ValueKind.COST, tol)
    return q_r, q_c, ramu_return(cmdp, pi, mix, specs[0], ValueKind.REWARD, Q=q_r), ramu_return(cmdp, pi, mix, specs[1], ValueKind.COST, Q=q_c)


def solve_exact(
    cmdp: TabularCMDP,
    mix: ModelMixture | None,
    specs: tuple[DistortionSpec, DistortionSpec],
    max_iter: int = 100,
    tol: float = 1e-10,
    enumerate_limit: int = 4096,
) -> ExactSolution:
    """Exact CRPO iteration over deterministic policies, then a feasible refinement.

    Each step evaluates both risk-averse Q functions and switches to the
    reward-greedy policy when the constraint holds, otherwise to the
    cost-greedy one. When the CRPO path contains a feasible policy it is
    refined: by exhaustive search if there are at most ``enumerate_limit``
    deterministic policies, otherwise by single-state action changes that keep
    the constraint and raise the objective.
    """
    if cmdp.nS * cmdp.nA > 400:
        raise ValueError("solve_exact is limited to nS * nA <= 400")
    mix = ModelMixture.degenerate(cmdp) if mix is None else mix
    budget = cmdp.budget + 1e-9
    cache: dict[tuple, tuple] = {}

    def evaluate(actions: tuple):
        if actions not in cache:
            cache[actions] = _evaluate(cmdp, Policy.deterministic(actions, cmdp.nA), mix, specs, tol)
        return cache[actions]

    pi = Policy.uniform(cmdp.nS, cmdp.nA)
    q_r, q_c, _, j_c = _evaluate(cmdp, pi, mix, specs, tol)
    seen: list[tuple] = []
    it = 0
    for it in range(1, max_iter + 1):
        greedy = np.argmax(q_r.values, axis=1) if j_c <= budget else np.argmin(q_c.values, axis=1)
        actions = tuple(int(a) for a in greedy)
        if actions in seen:
            break
        seen.append(actions)
        q_r, q_c, _, j_c = evaluate(actions)

    feasible = [a for a in seen if evaluate(a)[3] <= budget]
    if not feasible:
        best = min(seen, key=lambda a: evaluate(a)[3])
        _, _, j_r, j_c = evaluate(best)
        return ExactSolution(Policy.deterministic(best, cmdp.nA), False, j_r, j_c, it)

    best = max(feasible, key=lambda a: evaluate(a)[2])
    if cmdp.nA**cmdp.nS <= enumerate_limit:
        # CRPO switching plus local moves can stall in a local optimum
        for cand in itertools.product(range(cmdp.nA), repeat=cmdp.nS):
            _, _, j_r, j_c = evaluate(cand)
            if j_c <= budget and j_r > evaluate(best)[2]:
                best = cand
    improved = True
    while improved:
        improved = False
        current = evaluate(best)[2]
        candidates = []
        for s in range(cmdp.nS):
            for a in range(cmdp.nA):
                if a != best[s]:
                    cand = best[:s] + (a,) + best[s + 1:]
                    _, _, j_r, j_c = evaluate(cand)
                    if j_c <= budget and j_r > current + 1e-12:
                        candidates.append((j_r, cand))
        if candidates:
            best = max(candidates)[1]
            improved = True
    _, _, j_r, j_c = evaluate(best)
    return ExactSolution(Policy.deterministic(best, cmdp.nA), True, j_r, j_c, it)

