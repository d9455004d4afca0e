"""Discrete-time single-server queue with geometric arrivals and services.

Queue length changes by at most one per slot: an arrival occurs with
probability ``arrival_prob``, then a service completes with probability
``finish_prob`` whenever the queue (including the arrival) is nonempty.
Under stability the stationary law is geometric in the traffic intensity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import TransitionDataset, from_pairs
from ..tabular import TabularChain


@dataclass(frozen=True)
class QueueParams:
    """Arrival/finish probabilities and the uniform probe range [0, probe_range)."""

    arrival_prob: float
    finish_prob: float
    probe_range: int

    def __post_init__(self):
        if not 0.0 < self.arrival_prob < 1.0 or not 0.0 < self.finish_prob < 1.0:
            raise ValueError("arrival and finish probabilities must lie in (0, 1)")
        if self.finish_prob <= self.arrival_prob:
            raise ValueError("stability requires finish_prob > arrival_prob")
        if self.probe_range < 2:
            raise ValueError("probe range must cover at least two states")


def traffic_intensity(arrival_prob: float, finish_prob: float) -> float:
    return arrival_prob * (1.0 - finish_prob) / (finish_prob * (1.0 - arrival_prob))


def make_params(arrival_prob: float, finish_prob: float, probe_range: int | None = None) -> QueueParams:
    """Build parameters; the probe range defaults to ceil(40 * traffic intensity)."""
    if probe_range is None:
        probe_range = math.ceil(40.0 * traffic_intensity(arrival_prob, finish_prob))
    return QueueParams(arrival_prob, finish_prob, probe_range)


def queue_transition(x: int, qp: QueueParams, rng: np.random.Generator) -> int:
    """One slot of the queue from length ``x``; never returns a negative length."""
    if x < 0:
        raise ValueError("queue length must be nonnegative")
    length = x + (rng.random() < qp.arrival_prob)
    if length > 0 and rng.random() < qp.finish_prob:
        length -= 1
    return int(length)


def queue_transition_batch(xs: np.ndarray, qp: QueueParams, rng: np.random.Generator) -> np.ndarray:
    """Independent one-slot transitions for a vector of queue lengths."""
    xs = np.asarray(xs, dtype=np.int64)
    if np.any(xs < 0):
        raise ValueError("queue lengths must be nonnegative")
    length = xs + (rng.random(xs.shape) < qp.arrival_prob)
    serve = (length > 0) & (rng.random(xs.shape) < qp.finish_prob)
    return length - serve


def queue_stationary(qp: QueueParams, size: int) -> np.ndarray:
    """Geometric stationary law truncated and renormalized over [0, size)."""
    rho = traffic_intensity(qp.arrival_prob, qp.finish_prob)
    law = (1.0 - rho) * rho ** np.arange(size)
    return law / law.sum()


def queue_make_dataset(qp: QueueParams, n: int, rng: np.random.Generator) -> TransitionDataset:
    """Probe lengths uniformly over [0, probe_range) and step each once."""
    xs = rng.integers(0, qp.probe_range, size=n)
    xps = queue_transition_batch(xs, qp, rng)
    return from_pairs(xs.astype(float)[:, None], xps.astype(float)[:, None])


def queue_tabular_chain(qp: QueueParams, n_states: int) -> TabularChain:
    """Dense kernel on [0, n_states) with the overflow mass reflected at the top."""
    up = qp.arrival_prob * (1.0 - qp.finish_prob)
    down = (1.0 - qp.arrival_prob) * qp.finish_prob
    k = np.zeros((n_states, n_states))
    k[0, 0] = 1.0 - up
    k[0, 1] = up
    for i in range(1, n_states - 1):
        k[i, i - 1] = down
        k[i, i + 1] = up
        k[i, i] = 1.0 - up - down
    k[-1, -2] = down
    k[-1, -1] = 1.0 - down
    return TabularChain(k)
