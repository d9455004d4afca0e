"""Model-based baselines: push a count-estimated kernel forward for tabular
tasks, or roll out a fitted Gaussian-mean transition network for continuous
ones."""
from __future__ import annotations

import numpy as np

from . import tabular
from .data import TransitionDataset, state_indices
from .models import mlp_backward, mlp_forward, mlp_init
from .vpm import AdamState, adam_step


def empirical_kernel(ds: TransitionDataset, dims) -> np.ndarray:
    """Row-normalized transition counts; states never probed get a self-loop."""
    i = state_indices(ds.xs, dims)
    j = state_indices(ds.xps, dims)
    n_states = int(np.prod(np.atleast_1d(dims)))
    counts = np.bincount(i * n_states + j, minlength=n_states * n_states).astype(float)
    counts = counts.reshape(n_states, n_states)
    totals = counts.sum(axis=1)
    empty = totals == 0
    counts[empty, np.flatnonzero(empty)] = 1.0
    return counts / counts.sum(axis=1, keepdims=True)


def pushforward_estimate(kernel: np.ndarray, steps: int, start: np.ndarray | None = None) -> np.ndarray:
    """Apply the estimated kernel ``steps`` times to a start distribution."""
    n = kernel.shape[0]
    mu = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float).copy()
    kt = kernel.T
    for _ in range(steps):
        mu = kt @ mu
    return mu


def ope_model_based(
    ds: TransitionDataset,
    dims,
    steps: int = 200,
    discount: float | None = None,
    init_probs: np.ndarray | None = None,
) -> tuple[float, float | None]:
    """Average and discounted reward from the count-estimated kernel and rewards.

    Rewards per state are empirical means over the dataset rows landing
    there; unvisited states contribute zero.
    """
    if ds.rewards is None:
        raise ValueError("dataset has no rewards")
    idx = state_indices(ds.xs, dims)
    n_states = int(np.prod(np.atleast_1d(dims)))
    visits = np.bincount(idx, minlength=n_states).astype(float)
    sums = np.bincount(idx, weights=ds.rewards, minlength=n_states)
    r_hat = np.divide(sums, visits, out=np.zeros(n_states), where=visits > 0)
    kernel = empirical_kernel(ds, dims)
    mu = pushforward_estimate(kernel, steps)
    avg = float(mu @ r_hat)
    disc = None
    if discount is not None:
        if init_probs is None:
            raise ValueError("discounted estimate needs the initial distribution")
        occ = np.asarray(init_probs, dtype=float).copy()
        total = (1.0 - discount) * occ.copy()
        kt = kernel.T
        scale = 1.0 - discount
        for _ in range(steps):
            occ = kt @ occ
            scale *= discount
            total += scale * occ
        disc = float(total @ r_hat / total.sum())
    return avg, disc


class MeanTransitionModel:
    """Network predicting the next-point mean, with a fixed output spread."""

    def __init__(self, layer_sizes, out_dim: int, rng: np.random.Generator, noise_std: float = 0.1):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.out_dim = int(out_dim)
        self.noise_std = float(noise_std)
        self.params = mlp_init(self.layer_sizes, self.out_dim, rng, out_scale=1.0)

    def predict(self, xs: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward(self.params, np.atleast_2d(np.asarray(xs, dtype=float)))
        return out

    def sample(self, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mean = self.predict(xs)
        return mean + self.noise_std * rng.standard_normal(mean.shape)


def fit_mean_regressor(
    ds: TransitionDataset,
    hidden,
    rng: np.random.Generator,
    steps: int = 1500,
    batch_size: int = 1000,
    lr: float = 5e-4,
    noise_std: float = 0.1,
) -> MeanTransitionModel:
    """Least-squares fit of x -> x' by minibatch adaptive gradient steps."""
    model = MeanTransitionModel([ds.dim, *hidden], ds.dim, rng, noise_std)
    sizes = [p.size for p in model.params]
    opt = AdamState.zeros(sum(sizes))
    for _ in range(steps):
        idx = rng.integers(0, ds.n, size=min(batch_size, ds.n))
        x, y = ds.xs[idx], ds.xps[idx]
        out, caches = mlp_forward(model.params, x)
        grads = mlp_backward(model.params, caches, 2.0 * (out - y) / x.shape[0])
        flat = np.concatenate([g.ravel() for g in grads])
        delta = adam_step(opt, flat, lr, beta1=0.5)
        off = 0
        for p, size in zip(model.params, sizes):
            p -= delta[off : off + size].reshape(p.shape)
            off += size
    return model


def rollout_regressor(
    model: MeanTransitionModel, x0: np.ndarray, n_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Apply the fitted transition repeatedly; returns the final points."""
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    for _ in range(n_steps):
        x = model.sample(x, rng)
    return x
