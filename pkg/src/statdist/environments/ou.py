"""Mean-reverting diffusion simulated by explicit Euler steps.

The process ``dX = strength * (mean - X) dt + sigma dW`` has the Gaussian
stationary law N(mean, sigma^2 / (2 * strength)), which serves as ground
truth for sample-quality comparisons.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import TransitionDataset, from_pairs


@dataclass(frozen=True)
class OuParams:
    mean: float
    sigma: float
    strength: float
    dt: float

    def __post_init__(self):
        if self.sigma <= 0 or self.strength <= 0 or self.dt <= 0:
            raise ValueError("sigma, strength and dt must be positive")


def stationary_std(op: OuParams) -> float:
    return op.sigma / math.sqrt(2.0 * op.strength)


def ou_em_step(x, op: OuParams, rng: np.random.Generator):
    """One explicit Euler step; accepts a scalar or an array of particles."""
    x = np.asarray(x, dtype=float)
    noise = rng.standard_normal(x.shape) if x.shape else rng.standard_normal()
    return x + op.strength * (op.mean - x) * op.dt + op.sigma * math.sqrt(op.dt) * noise


def ou_simulate(op: OuParams, x0, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Evolve particles for ``n_steps``; returns the (n_steps+1, n_particles) path."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    path = np.empty((n_steps + 1, x0.size))
    path[0] = x0
    for t in range(n_steps):
        path[t + 1] = ou_em_step(path[t], op, rng)
    return path


def ou_stationary_sampler(op: OuParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the stationary law N(mean, sigma^2 / (2 strength))."""
    return rng.normal(op.mean, stationary_std(op), size=size)


def ou_window_dataset(path: np.ndarray, window: int) -> TransitionDataset:
    """Transition pairs from the most recent ``window`` steps of a simulated path."""
    if path.ndim != 2 or path.shape[0] < 2:
        raise ValueError("need a path with at least one step")
    window = min(window, path.shape[0] - 1)
    if window < 1:
        raise ValueError("window must cover at least one step")
    xs = path[-window - 1 : -1].ravel()
    xps = path[-window:].ravel()
    return from_pairs(xs[:, None], xps[:, None])
