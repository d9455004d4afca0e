"""Exact dense solvers for finite-state chains.

This is the oracle layer: plain power iteration, the ratio-space power step,
its penalized closed form, the damped noisy iteration used for convergence
experiments, discounted occupancy fixed points, and empirical estimates of
the joint pair distribution from data.  All functions are pure and operate
on immutable inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import TransitionDataset, state_indices

ROW_SUM_TOL = 1e-12
PROBE_SUM_TOL = 1e-12
JOINT_SUM_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve exhausts its iteration budget."""


@dataclass(frozen=True)
class TabularChain:
    """Row-stochastic transition kernel: ``kernel[i, j]`` moves i -> j."""

    kernel: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"kernel must be square, got shape {k.shape}")
        if np.any(k < 0):
            raise ValueError("kernel has negative entries")
        bad = np.flatnonzero(np.abs(k.sum(axis=1) - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ValueError(f"kernel row {bad[0]} sums to {k[bad[0]].sum()!r}, not 1")
        object.__setattr__(self, "kernel", k)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]


@dataclass(frozen=True)
class JointMatrix:
    """Joint pair distribution ``tp[i, j] = P(j | i) * probe(i)``."""

    tp: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tp, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError(f"joint matrix must be square, got shape {t.shape}")
        if np.any(t < 0):
            raise ValueError("joint matrix has negative entries")
        if abs(t.sum() - 1.0) > JOINT_SUM_TOL:
            raise ValueError(f"joint matrix sums to {t.sum()!r}, not 1")
        object.__setattr__(self, "tp", t)

    @property
    def n_states(self) -> int:
        return self.tp.shape[0]

    def probe(self) -> np.ndarray:
        """Row marginal, i.e. the probe distribution over x."""
        return self.tp.sum(axis=1)


def validate_probability(p, atol: float = PROBE_SUM_TOL) -> np.ndarray:
    """Check a vector is a probability distribution and return it as float64."""
    v = np.asarray(p, dtype=float)
    if v.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if np.any(v < 0):
        raise ValueError("probability vector has negative entries")
    if abs(v.sum() - 1.0) > atol:
        raise ValueError(f"probability vector sums to {v.sum()!r}, not 1")
    return v


def check_probe_support(probe: np.ndarray, mu: np.ndarray) -> None:
    """Verify absolute continuity: every state with mu > 0 has probe > 0."""
    bad = np.flatnonzero((np.asarray(mu) > 0) & (np.asarray(probe) <= 0))
    if bad.size:
        raise ValueError(
            f"probe support violation at states {bad.tolist()[:10]}: "
            "target mass where probe is zero"
        )


def joint_from_chain(chain: TabularChain, probe) -> JointMatrix:
    """Assemble the joint pair distribution from a kernel and probe."""
    p = validate_probability(probe)
    if p.size != chain.n_states:
        raise ValueError("probe length does not match the chain")
    return JointMatrix(chain.kernel * p[:, None])


def power_step(chain: TabularChain, mu) -> np.ndarray:
    """One distribution push-forward ``mu' = K^T mu``; preserves total mass."""
    m = validate_probability(mu, atol=1e-9)
    if m.size != chain.n_states:
        raise ValueError("distribution length does not match the chain")
    return chain.kernel.T @ m


def solve_stationary(
    chain: TabularChain, tol: float = 1e-12, max_iter: int = 100_000, init=None
) -> tuple[np.ndarray, int]:
    """Power-iterate until ``||mu - K^T mu||_1 <= tol``; starts uniform by default.

    Returns the fixed point and the number of iterations used.  Raises
    ConvergenceError when the budget runs out, which typically signals a
    periodic or reducible chain.
    """
    kt = np.ascontiguousarray(chain.kernel.T)
    if init is None:
        mu = np.full(chain.n_states, 1.0 / chain.n_states)
    else:
        mu = validate_probability(init).copy()
    for it in range(max_iter + 1):
        push = kt @ mu
        if np.abs(mu - push).sum() <= tol:
            return mu, it
        mu = push
    raise ConvergenceError(
        f"no stationary fixed point within {max_iter} iterations (tol={tol})"
    )


def ratio_power_step(joint: JointMatrix, probe, tau) -> np.ndarray:
    """One ratio-space power update ``tau'(j) = (sum_i tp[i,j] tau(i)) / p(j)``.

    Scale-preserving: ``sum_j p(j) tau'(j)`` equals ``sum_i p(i) tau(i)``
    whenever the joint's row marginal is p.  Raises when mass flows into a
    state the probe never visits.
    """
    p = np.asarray(probe, dtype=float)
    t = np.asarray(tau, dtype=float)
    num = joint.tp.T @ t
    bad = np.flatnonzero((p <= 0.0) & (num > 0.0))
    if bad.size:
        raise ValueError(
            f"probe support violation: mass flows into state {bad[0]} where probe is zero"
        )
    out = np.zeros_like(num)
    pos = p > 0.0
    out[pos] = num[pos] / p[pos]
    return out


def regularized_update_closed_form(
    joint: JointMatrix, probe, tau, penalty: float
) -> np.ndarray:
    """Solve the penalized quadratic update exactly as a linear system.

    Minimizes ``0.5 E_p[tau'^2] - E_tp[tau(x) tau'(x')] +
    penalty * (E_p[tau'] - 1)^2`` over unconstrained tau'.  For any positive
    penalty the solution coincides with :func:`ratio_power_step` and keeps
    ``E_p[tau'] = 1``, provided the input satisfies ``E_p[tau] = 1``.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    p = np.asarray(probe, dtype=float)
    t = np.asarray(tau, dtype=float)
    if np.any(p <= 0):
        raise ValueError("closed-form solve requires a strictly positive probe")
    mean = float(p @ t)
    if abs(mean - 1.0) > 1e-8:
        raise ValueError(f"input ratio has probe mean {mean!r}, expected 1")
    a = np.diag(p) + 2.0 * penalty * np.outer(p, p)
    b = joint.tp.T @ t + 2.0 * penalty * p
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:  # cannot occur for p > 0; guarded anyway
        raise ValueError("singular system in penalized update") from exc


@dataclass(frozen=True)
class DampedRun:
    """Trajectory record of a damped noisy iteration.

    ``residuals[k]`` is the squared l2 fixed-point residual after step k+1,
    ``step_sizes[k]`` the step size used.  The iterate-selection weights are
    proportional to ``a_k (1 - a_k)``.
    """

    residuals: np.ndarray
    step_sizes: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        w = self.step_sizes * (1.0 - self.step_sizes)
        return w / w.sum()

    @property
    def weighted_mean_residual(self) -> float:
        return float(self.weights @ self.residuals)

    def weighted_residual_curve(self, checkpoints) -> np.ndarray:
        """Weighted mean residual of the run truncated at each checkpoint (>= 2)."""
        cp = np.asarray(checkpoints, dtype=int)
        if np.any(cp < 2) or np.any(cp > self.residuals.size):
            raise ValueError("checkpoints must lie in [2, steps]")
        w = self.step_sizes * (1.0 - self.step_sizes)
        cw = np.cumsum(w)
        cwr = np.cumsum(w * self.residuals)
        return cwr[cp - 1] / cw[cp - 1]


def damped_noisy_iteration(
    chain: TabularChain,
    mu0,
    noise_scale: float,
    steps: int,
    rng: np.random.Generator,
) -> DampedRun:
    """Damped stochastic power iteration with step sizes ``a_k = 1/sqrt(k)``.

    Each step applies ``mu <- (1 - a_k) mu + a_k (K^T mu + eps_k)`` with
    zero-mean Gaussian noise projected onto the zero-sum hyperplane, then
    clips negatives and renormalizes so iterates stay on the simplex.
    """
    kt = np.ascontiguousarray(chain.kernel.T)
    mu = validate_probability(mu0).copy()
    if mu.size != chain.n_states:
        raise ValueError("distribution length does not match the chain")
    n = mu.size
    residuals = np.empty(steps)
    alphas = np.empty(steps)
    push = kt @ mu
    for k in range(1, steps + 1):
        a = 1.0 / math.sqrt(k)
        if noise_scale > 0.0:
            eps = noise_scale * rng.standard_normal(n)
            eps -= eps.mean()
            mu = (1.0 - a) * mu + a * (push + eps)
            np.clip(mu, 0.0, None, out=mu)
            mu /= mu.sum()
        else:
            mu = (1.0 - a) * mu + a * push
        push = kt @ mu
        diff = mu - push
        residuals[k - 1] = diff @ diff
        alphas[k - 1] = a
    return DampedRun(residuals=residuals, step_sizes=alphas)


def discounted_ratio_fixed_point(
    joint: JointMatrix,
    probe,
    initial_dist,
    discount: float,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Fixed point of ``p∘tau = (1-g) m0 + g Tp^T tau`` for discount g in [0, 1).

    The map is a g-contraction in the weighted measure, so the iteration
    converges from any start; at g = 0 the result is exactly ``m0 / p``.
    """
    if not 0.0 <= discount < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    p = np.asarray(probe, dtype=float)
    m0 = validate_probability(initial_dist)
    pos = p > 0.0

    def apply(t):
        num = (1.0 - discount) * m0 + discount * (joint.tp.T @ t)
        bad = np.flatnonzero(~pos & (num > 0.0))
        if bad.size:
            raise ValueError(
                f"probe support violation: occupancy mass at state {bad[0]} "
                "where probe is zero"
            )
        out = np.zeros_like(num)
        out[pos] = num[pos] / p[pos]
        return out, num

    tau, _ = apply(np.zeros_like(p))
    for _ in range(max_iter):
        new, _ = apply(tau)
        _, target = apply(new)
        resid = np.abs(p * new - target).sum()
        tau = new
        if resid <= tol:
            return tau
    raise ConvergenceError(f"discounted fixed point not reached in {max_iter} iterations")


def empirical_joint_from_data(ds: TransitionDataset, dims) -> tuple[JointMatrix, np.ndarray]:
    """Count-based estimates of the joint pair distribution and the probe.

    Every dataset point must cast exactly to a state on the ``dims`` grid.
    """
    i = state_indices(ds.xs, dims)
    j = state_indices(ds.xps, dims)
    n_states = int(np.prod(np.atleast_1d(dims)))
    counts = np.bincount(i * n_states + j, minlength=n_states * n_states).astype(float)
    tp = counts.reshape(n_states, n_states) / ds.n
    return JointMatrix(tp), tp.sum(axis=1)


def random_ergodic_chain(n_states: int, rng: np.random.Generator) -> TabularChain:
    """Dense random chain with Dirichlet(1) rows; strictly positive, hence ergodic."""
    return TabularChain(rng.dirichlet(np.ones(n_states), size=n_states))
