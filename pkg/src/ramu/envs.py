"""Desk-scale environments with a perturbable dynamics parameter.

``GridHazardEnv`` is a slippery gridworld whose dynamics are also available
as an exact :class:`~ramu.cmdp.TabularCMDP`. ``PointMassEnv`` is a damped
point mass integrated with explicit Euler steps. Both expose the same small
interface used by the learner and the experiment harness: ``reset``,
``step``, ``with_param`` and a ``state_box``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
import itertools
from typing import Callable

import numpy as np

from .cmdp import TabularCMDP

__all__ = [
    "ConfigError",
    "GridHazardEnv",
    "PointMassEnv",
    "SweepSpec",
    "SweepPoint",
    "Rollout",
    "build_tabular",
    "step",
    "rollout",
    "is_safe",
    "make_sweep",
]

# (d_row, d_col) for up, right, down, left
_MOVES = np.array([(-1, 0), (0, 1), (1, 0), (0, -1)])


class ConfigError(ValueError):
    """Invalid environment, sweep or experiment configuration."""


def is_safe(total_cost: float, budget: float) -> bool:
    """Safety indicator shared by rollouts and aggregate reports."""
    return bool(total_cost <= budget)


@dataclass(frozen=True)
class GridHazardEnv:
    """Slippery gridworld with hazard cells and an absorbing goal.

    Coordinates are ``(row, col)``. An action moves one cell in its direction
    with probability ``1 - slip`` and to either perpendicular neighbour with
    probability ``slip / 2``; moves off the grid leave the agent in place.
    Arriving in a hazard costs 1, arriving in the goal pays 1.
    """

    width: int = 5
    height: int = 5
    start: tuple = (0, 0)
    goal: tuple = (0, 4)
    hazards: tuple = ()
    slip: float = 0.2
    horizon: int = 200
    budget: float = 15.0
    gamma: float = 0.95

    n_actions = 4
    state_dim = 2

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        object.__setattr__(self, "hazards", tuple(sorted(tuple(int(v) for v in h) for h in self.hazards)))
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid must have positive width and height")
        if not (0.0 <= self.slip <= 1.0):
            raise ConfigError(f"slip must lie in [0, 1], got {self.slip}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        for cell in (self.start, self.goal, *self.hazards):
            if not (0 <= cell[0] < self.height and 0 <= cell[1] < self.width):
                raise ConfigError(f"cell {cell} lies outside the {self.height}x{self.width} grid")
        if self.goal in self.hazards:
            raise ConfigError(f"goal {self.goal} overlaps a hazard cell")
        if self.start == self.goal:
            raise ConfigError("start and goal must differ")

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def index(self, cell) -> int:
        return int(cell[0]) * self.width + int(cell[1])

    def cell(self, s: int) -> tuple[int, int]:
        return divmod(int(s), self.width)

    @property
    def state_box(self) -> tuple[tuple, tuple]:
        return (0.0, 0.0), (float(self.height - 1), float(self.width - 1))

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.height, self.width

    def with_param(self, name: str, value: float) -> "GridHazardEnv":
        if name not in ("slip",):
            raise ConfigError(f"GridHazardEnv has no sweepable parameter {name!r}")
        return replace(self, **{name: value})

    def _move(self, cell, direction: int) -> tuple[int, int]:
        r, c = cell[0] + _MOVES[direction][0], cell[1] + _MOVES[direction][1]
        if 0 <= r < self.height and 0 <= c < self.width:
            return int(r), int(c)
        return cell

    @cached_property
    def _tables(self):
        nS, nA = self.n_states, self.n_actions
        hazard = np.zeros(nS, dtype=bool)
        for h in self.hazards:
            hazard[self.index(h)] = True
        g = self.index(self.goal)
        p = np.zeros((nS, nA, nS))
        for s in range(nS):
            if s == g:
                p[s, :, s] = 1.0
                continue
            cell = self.cell(s)
            for a in range(nA):
                p[s, a, self.index(self._move(cell, a))] += 1.0 - self.slip
                for lateral in ((a + 1) % 4, (a + 3) % 4):
                    p[s, a, self.index(self._move(cell, lateral))] += self.slip / 2.0
        arrive_goal = np.zeros(nS)
        arrive_goal[g] = 1.0
        r = p @ arrive_goal
        c = p @ hazard.astype(float)
        r[g] = 0.0
        c[g] = 0.0
        cum = np.cumsum(p, axis=2)
        cum[..., -1] = 1.0
        return p, r, c, hazard, cum

    def sample_next_index(self, s: int, a: int, rng: np.random.Generator, size=None):
        if not (0 <= a < self.n_actions):
            raise ValueError(f"invalid action {a!r}")
        cum = self._tables[4][int(s), int(a)]
        return np.searchsorted(cum, rng.random(size), side="right")

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.array(self.start, dtype=float)

    def step(self, state, a: int, rng: np.random.Generator):
        """One transition from coordinate vector ``state``: ``(s', r, c, done)``."""
        s = self.index(np.rint(state).astype(int))
        if s == self.index(self.goal):
            return np.array(self.goal, dtype=float), 0.0, 0.0, True
        s2 = int(self.sample_next_index(s, a, rng))
        g = self.index(self.goal)
        hazard = self._tables[3]
        return np.array(self.cell(s2), dtype=float), float(s2 == g), float(hazard[s2]), s2 == g


def build_tabular(env: GridHazardEnv, budget: float | None = None) -> TabularCMDP:
    """Exact tabular dynamics of the grid; ``budget`` defaults to the episodic one."""
    p, r, c, _, _ = env._tables
    d0 = np.zeros(env.n_states)
    d0[env.index(env.start)] = 1.0
    return TabularCMDP(p=p, r=r, c=c, d0=d0, gamma=env.gamma, budget=env.budget if budget is None else budget)


@dataclass(frozen=True)
class PointMassEnv:
    """Damped point mass in ``dim`` dimensions.

    State is ``(position, velocity)``; each action picks an acceleration in
    ``{-accel, 0, accel}`` per coordinate. Reward is the decrease in distance
    to ``target``; cost is 1 whenever the new position lies in the hazard box.
    """

    dim: int = 1
    dt: float = 0.1
    damping: float = 0.5
    accel: float = 1.0
    start: float = -1.0
    target: float = 1.0
    hazard_low: float = 0.2
    hazard_high: float = 0.5
    pos_bound: float = 2.0
    vel_bound: float = 2.0
    horizon: int = 100
    budget: float = 10.0
    gamma: float = 0.95
    grid_bins: int = 21

    def __post_init__(self):
        if self.dim < 1 or self.dt <= 0 or self.horizon < 1:
            raise ConfigError("dim, dt and horizon must be positive")
        if self.damping < 0:
            raise ConfigError("damping must be non-negative")
        if self.hazard_low > self.hazard_high:
            raise ConfigError("hazard_low must not exceed hazard_high")
        if self.grid_bins < 2:
            raise ConfigError("grid_bins must be >= 2")

    @property
    def state_dim(self) -> int:
        return 2 * self.dim

    @cached_property
    def _actions(self) -> np.ndarray:
        return self.accel * np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=self.dim)))

    @property
    def n_actions(self) -> int:
        return 3**self.dim

    @property
    def state_box(self) -> tuple[tuple, tuple]:
        low = (-self.pos_bound,) * self.dim + (-self.vel_bound,) * self.dim
        return low, tuple(-v for v in low)

    @property
    def grid_shape(self) -> tuple:
        return (self.grid_bins,) * self.state_dim

    def with_param(self, name: str, value: float) -> "PointMassEnv":
        if name not in ("damping", "accel", "dt"):
            raise ConfigError(f"PointMassEnv has no sweepable parameter {name!r}")
        return replace(self, **{name: value})

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.concatenate([np.full(self.dim, self.start), np.zeros(self.dim)])

    def in_hazard(self, pos) -> bool:
        pos = np.asarray(pos)
        return bool(np.all((pos >= self.hazard_low) & (pos <= self.hazard_high)))

    def step(self, state, a: int, rng: np.random.Generator | None = None):
        if not (0 <= a < self.n_actions):
            raise ValueError(f"invalid action {a!r}")
        state = np.asarray(state, dtype=float)
        pos, vel = state[: self.dim], state[self.dim:]
        acc = self._actions[a]
        new_pos = np.clip(pos + self.dt * vel, -self.pos_bound, self.pos_bound)
        new_vel = np.clip(vel + self.dt * (acc - self.damping * vel), -self.vel_bound, self.vel_bound)
        goal = np.full(self.dim, self.target)
        reward = float(np.linalg.norm(pos - goal) - np.linalg.norm(new_pos - goal))
        cost = float(self.in_hazard(new_pos))
        return np.concatenate([new_pos, new_vel]), reward, cost, False


def step(env, s, a: int, rng: np.random.Generator):
    """Module-level form of ``env.step`` returning ``(s', r, c)``."""
    s2, r, c, _ = env.step(s, a, rng)
    return s2, r, c


@dataclass
class Rollout:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    total_reward: float = 0.0
    total_cost: float = 0.0
    safe: bool = True


def rollout(env, policy: Callable[[np.ndarray, np.random.Generator], int], horizon: int, rng: np.random.Generator, budget: float | None = None) -> Rollout:
    """Run one episode; totals are undiscounted episodic sums."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    out = Rollout()
    s = env.reset(rng)
    for _ in range(horizon):
        a = int(policy(s, rng))
        s2, r, c, done = env.step(s, a, rng)
        out.states.append(s)
        out.actions.append(a)
        out.rewards.append(r)
        out.costs.append(c)
        s = s2
        if done:
            # absorbing goal: the remaining steps contribute nothing
            break
    out.total_reward = float(sum(out.rewards))
    out.total_cost = float(sum(out.costs))
    out.safe = is_safe(out.total_cost, env.budget if budget is None else budget)
    return out


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    nominal: float
    low: float
    high: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("sweep count must be >= 1")
        if not (self.low <= self.nominal <= self.high):
            raise ConfigError(f"sweep range [{self.low}, {self.high}] excludes nominal {self.nominal}")

    def values(self) -> list[float]:
        if self.count == 1:
            return [float(self.nominal)]
        vals = [float(round(v, 12)) for v in np.linspace(self.low, self.high, self.count)]
        hits = [i for i, v in enumerate(vals) if abs(v - self.nominal) <= 1e-9]
        if not hits:
            raise ConfigError(
                f"sweep grid {vals} does not contain the nominal value {self.nominal}; adjust count or range"
            )
        vals[hits[0]] = float(self.nominal)
        return vals


@dataclass(frozen=True)
class SweepPoint:
    value: float
    env: object
    nominal: bool


def make_sweep(env, sweep: SweepSpec) -> list[SweepPoint]:
    """Test environments on an even grid of ``sweep.parameter``, nominal flagged."""
    return [SweepPoint(v, env.with_param(sweep.parameter, v), v == sweep.nominal) for v in sweep.values()]
