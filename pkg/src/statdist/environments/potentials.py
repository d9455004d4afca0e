"""Two-dimensional target densities and a Hamiltonian Monte Carlo operator.

Targets live on the box [-half_width, half_width]^2 with the log-density
clamped below at ``log_floor`` so the probe-overlap assumption holds
numerically; outside the box the density is zero.  The leapfrog force field
uses the clamped gradient (zero in the clamped plateau), which keeps the
integrator reversible, and the Metropolis correction uses the exact clamped
energy, so the truncated target is left invariant.
"""
from __future__ import annotations

import numpy as np

from ..data import TransitionDataset, from_pairs


class Potential:
    """Base class; subclasses provide the raw log-density and its gradient."""

    name = "base"

    def __init__(self, half_width: float = 6.0, log_floor: float = -30.0):
        self.half_width = float(half_width)
        self.log_floor = float(log_floor)

    def raw_log_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def raw_grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_box(self, x: np.ndarray) -> np.ndarray:
        return np.all(np.abs(x) <= self.half_width, axis=-1)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Clamped log-density; -inf outside the box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.maximum(self.raw_log_density(x), self.log_floor)
        return np.where(self.in_box(x), out, -np.inf)

    def grad_log_density(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the clamped log-density (zero where the clamp is active)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        active = (self.raw_log_density(x) > self.log_floor)[:, None]
        return self.raw_grad(x) * active


class TwoGaussians(Potential):
    """Equal mixture of two unit-variance modes at (+-2, 0)."""

    name = "2gauss"
    _centers = np.array([[2.0, 0.0], [-2.0, 0.0]])

    def _mode_logs(self, x):
        d = x[:, None, :] - self._centers[None, :, :]
        return -0.5 * np.sum(d * d, axis=-1)

    def raw_log_density(self, x):
        logs = self._mode_logs(x)
        m = logs.max(axis=1)
        return m + np.log(0.5 * np.exp(logs - m[:, None]).sum(axis=1))

    def raw_grad(self, x):
        logs = self._mode_logs(x)
        m = logs.max(axis=1, keepdims=True)
        resp = np.exp(logs - m)
        resp /= resp.sum(axis=1, keepdims=True)
        d = self._centers[None, :, :] - x[:, None, :]
        return np.sum(resp[:, :, None] * d, axis=1)


class Funnel(Potential):
    """Funnel shape: the first coordinate sets the log-scale of the second."""

    name = "funnel"
    _scale = 3.0

    def raw_log_density(self, x):
        v, y = x[:, 0], x[:, 1]
        return -0.5 * v * v / self._scale**2 - 0.5 * y * y * np.exp(-v) - 0.5 * v

    def raw_grad(self, x):
        v, y = x[:, 0], x[:, 1]
        g = np.empty_like(x)
        g[:, 0] = -v / self._scale**2 + 0.5 * y * y * np.exp(-v) - 0.5
        g[:, 1] = -y * np.exp(-v)
        return g


class Banana(Potential):
    """Gaussian warped along a parabola (curvature 0.3, horizontal spread 2)."""

    name = "banana"
    _curve = 0.3
    _spread = 2.0

    def raw_log_density(self, x):
        u = x[:, 1] + self._curve * x[:, 0] ** 2 - self._curve * self._spread**2
        return -0.5 * x[:, 0] ** 2 / self._spread**2 - 0.5 * u * u

    def raw_grad(self, x):
        u = x[:, 1] + self._curve * x[:, 0] ** 2 - self._curve * self._spread**2
        g = np.empty_like(x)
        g[:, 0] = -x[:, 0] / self._spread**2 - u * 2.0 * self._curve * x[:, 0]
        g[:, 1] = -u
        return g


_POTENTIALS = {cls.name: cls for cls in (TwoGaussians, Funnel, Banana)}


def make_potential(name: str) -> Potential:
    try:
        return _POTENTIALS[name]()
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(_POTENTIALS)}") from None


def hmc_transition_batch(
    xs: np.ndarray,
    pot: Potential,
    rng: np.random.Generator,
    step: float = 0.5,
    n_leapfrog: int = 1,
) -> np.ndarray:
    """One Metropolis-corrected leapfrog proposal per row; rejection keeps the row."""
    q0 = np.atleast_2d(np.asarray(xs, dtype=float))
    p0 = rng.standard_normal(q0.shape)
    q, p = q0.copy(), p0.copy()
    p = p + 0.5 * step * pot.grad_log_density(q)
    for i in range(n_leapfrog):
        q = q + step * p
        g = pot.grad_log_density(q)
        p = p + (step if i < n_leapfrog - 1 else 0.5 * step) * g
    h0 = -pot.log_density(q0) + 0.5 * np.sum(p0 * p0, axis=1)
    h1 = -pot.log_density(q) + 0.5 * np.sum(p * p, axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        accept = np.log(rng.random(q0.shape[0])) < (h0 - h1)
    accept &= np.isfinite(h1)
    return np.where(accept[:, None], q, q0)


def hmc_transition(
    x: np.ndarray,
    pot: Potential,
    rng: np.random.Generator,
    step: float = 0.5,
    n_leapfrog: int = 1,
) -> np.ndarray:
    """Single-point convenience wrapper around :func:`hmc_transition_batch`."""
    return hmc_transition_batch(np.asarray(x, dtype=float)[None, :], pot, rng, step, n_leapfrog)[0]


def uniform_probe(pot: Potential, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws over the potential's box."""
    return rng.uniform(-pot.half_width, pot.half_width, size=(n, 2))


def potentials_make_dataset(
    pot: Potential,
    n: int,
    rng: np.random.Generator,
    step: float = 0.5,
    n_leapfrog: int = 1,
) -> TransitionDataset:
    """Probe uniformly over the box and apply one HMC transition per point."""
    xs = uniform_probe(pot, n, rng)
    xps = hmc_transition_batch(xs, pot, rng, step, n_leapfrog)
    return from_pairs(xs, xps)


def hmc_reference_sample(
    pot: Potential,
    n: int,
    rng: np.random.Generator,
    n_steps: int = 2000,
    step: float = 0.5,
    n_leapfrog: int = 1,
) -> np.ndarray:
    """Final states of ``n`` parallel chains started uniformly in the box."""
    q = uniform_probe(pot, n, rng)
    for _ in range(n_steps):
        q = hmc_transition_batch(q, pot, rng, step, n_leapfrog)
    return q
