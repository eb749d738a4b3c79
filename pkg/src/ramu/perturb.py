"""Latent perturbations of observed transitions.

A latent ``x ~ U([-2 eps, 2 eps]^d)`` rescales each coordinate of the observed
displacement ``s' - s``, so ``eps`` is the mean absolute percentage change.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LatentPerturbation",
    "Transition",
    "sample_latent",
    "perturb_next_state",
    "expand_transition",
    "expand_batch",
]


@dataclass(frozen=True)
class LatentPerturbation:
    epsilon: float = 0.10
    dim: int = 1
    low: tuple | None = None
    high: tuple | None = None

    def __post_init__(self):
        if not (self.epsilon >= 0.0):
            raise ValueError("epsilon must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        for bound in (self.low, self.high):
            if bound is not None and len(bound) != self.dim:
                raise ValueError("state bounds must have one entry per coordinate")

    def clip(self, states: np.ndarray) -> np.ndarray:
        if self.low is None and self.high is None:
            return states
        return np.clip(states, self.low, self.high)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    c: float
    s_next: np.ndarray


def sample_latent(pert: LatentPerturbation, rng: np.random.Generator, size: int | tuple | None = None) -> np.ndarray:
    """Latent draws of shape ``size + (dim,)``; i.i.d. uniform on [-2 eps, 2 eps]."""
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (pert.dim,)
    two_eps = 2.0 * pert.epsilon
    return rng.uniform(-two_eps, two_eps, size=shape)


def perturb_next_state(s, s_next, x, pert: LatentPerturbation | None = None) -> np.ndarray:
    """Per-coordinate ``s + (s' - s)(1 + x)``, clipped into the state box if declared."""
    s, s_next, x = (np.asarray(v, dtype=float) for v in (s, s_next, x))
    if s.shape[-1] != s_next.shape[-1] or s.shape[-1] != x.shape[-1]:
        raise ValueError("state, next state and latent must have equal length")
    out = np.where(x == 0.0, s_next, s + (s_next - s) * (1.0 + x))
    if pert is not None:
        out = pert.clip(out)
    return out


def expand_transition(t: Transition, pert: LatentPerturbation, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` perturbed next states for one transition, shape (n, dim)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = sample_latent(pert, rng, n)
    return perturb_next_state(np.asarray(t.s)[None, :], np.asarray(t.s_next)[None, :], x, pert)


def expand_batch(s, s_next, pert: LatentPerturbation, n: int, rng: np.random.Generator) -> np.ndarray:
    """Batched form of :func:`expand_transition`: (B, dim) -> (B, n, dim)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    s, s_next = np.asarray(s, dtype=float), np.asarray(s_next, dtype=float)
    x = sample_latent(pert, rng, (s.shape[0], n))
    return perturb_next_state(s[:, None, :], s_next[:, None, :], x, pert)
