"""Variational power iteration for the stationary density ratio.

The trainable model is pitted against a scalar dual variable in a damped
quadratic saddle objective whose exact minimizer is one damped power step in
ratio space.  The outer loop freezes a reference copy of the model, the
inner loop runs two-timescale stochastic updates (descent in the model,
ascent in the dual).  A closed-form inner solver is available for tabular
models, plus a discounted variant whose fixed point is the discounted
occupancy ratio, and weighted-sample estimators for expectations under the
recovered distribution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import data as _data
from . import tabular as _tabular
from .models import RatioModel, TabularRatioModel, softplus_inv

RATIO_FLOOR = 1e-12


class NumericsError(RuntimeError):
    """Raised when a loss or gradient term stops being finite."""


@dataclass
class VpmConfig:
    """All optimization hyperparameters for a training run."""

    outer_steps: int = 50
    inner_steps: int = 10
    batch_size: int = 1000
    penalty_weight: float = 1.0
    lr_model: float = 1e-3
    lr_dual: float = 1e-2
    damping: str = "inv_sqrt"  # "constant" | "inv_sqrt" | "none"
    damping_alpha: float = 0.5  # used by the constant schedule
    optimizer: str = "adam"  # "sgd" | "adam"
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    discount: float | None = None
    seed: int = 0
    inner_mode: str = "sgd"  # "sgd" | "exact"
    warm_start_dual: bool = False

    def validate(self) -> None:
        if min(self.outer_steps, self.inner_steps, self.batch_size) < 1:
            raise ValueError("counts must be >= 1")
        if self.penalty_weight <= 0:
            raise ValueError("penalty_weight must be positive")
        if self.lr_model <= 0 or self.lr_dual <= 0:
            raise ValueError("learning rates must be positive")
        if self.damping not in ("constant", "inv_sqrt", "none"):
            raise ValueError(f"unknown damping schedule {self.damping!r}")
        if self.damping == "constant" and not 0.0 < self.damping_alpha <= 1.0:
            raise ValueError("constant damping step must lie in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.discount is not None and not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.inner_mode not in ("sgd", "exact"):
            raise ValueError(f"unknown inner mode {self.inner_mode!r}")


def damping_step_size(cfg: VpmConfig, outer_step: int) -> float:
    """Step size for the given 1-based outer iteration."""
    if cfg.damping == "none":
        return 1.0
    if cfg.damping == "constant":
        return cfg.damping_alpha
    return 1.0 / math.sqrt(outer_step)


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    first: np.ndarray
    second: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(
    state: AdamState,
    grad: np.ndarray,
    rate: float,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Bias-corrected adaptive step along ``grad``; the caller applies the sign.

    For a constant gradient the step magnitude approaches ``rate``.
    """
    g = np.asarray(grad, dtype=float)
    state.count += 1
    state.first = beta1 * state.first + (1.0 - beta1) * g
    state.second = beta2 * state.second + (1.0 - beta2) * g * g
    m_hat = state.first / (1.0 - beta1**state.count)
    v_hat = state.second / (1.0 - beta2**state.count)
    return rate * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(frozen=True)
class InitialTermSpec:
    """Initial-distribution term for the discounted objective.

    ``sampler(rng, size)`` draws points from the initial state-action law;
    ``probs`` is its exact vector on the flattened tabular grid, required by
    the closed-form inner solver.
    """

    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    probs: np.ndarray | None = None

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sampler is None:
            raise ValueError("no sampler configured for the initial-distribution term")
        return np.asarray(self.sampler(rng, size), dtype=float)


@dataclass
class SaddleState:
    """Mutable training state: model, frozen reference, scalar dual, optimizer moments."""

    model: RatioModel
    reference: RatioModel
    dual: float = 0.0
    outer_step: int = 1
    model_opt: AdamState | None = None
    dual_opt: AdamState | None = None
    last_loss: float | None = None


def make_state(model: RatioModel, cfg: VpmConfig) -> SaddleState:
    st = SaddleState(model=model, reference=model.snapshot())
    if cfg.optimizer == "adam":
        st.model_opt = AdamState.zeros(model.n_params)
        st.dual_opt = AdamState.zeros(1)
    return st


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericsError(f"non-finite {name} term in the saddle objective")


def loss_and_grads(
    state: SaddleState,
    mb: _data.Minibatch,
    cfg: VpmConfig,
    init_points: np.ndarray | None = None,
) -> tuple[float, np.ndarray, float]:
    """Minibatch value and gradients of the damped saddle objective.

    Probe expectations (the quadratic term, the damped reference product and
    the normalization penalty) average over the minibatch's x column; the
    kernel cross term pairs the frozen reference at x with the trainable
    model at x'.  In discounted mode the cross term is scaled by the
    discount and an initial-distribution term over ``init_points`` enters
    with the complementary weight.
    """
    model, ref = state.model, state.reference
    v = state.dual
    lam = cfg.penalty_weight
    a = damping_step_size(cfg, state.outer_step)
    w = mb.weights if mb.weights is not None else np.full(mb.size, 1.0 / mb.size)

    tau_x = model.value_batch(mb.xs)
    tau_xp = model.value_batch(mb.xps)
    ref_x = ref.value_batch(mb.xs)

    e_tau = float(w @ tau_x)
    quad = 0.5 * float(w @ (tau_x * tau_x))
    damped = float(w @ (ref_x * tau_x))
    cross = float(w @ (ref_x * tau_xp))
    penalty = lam * (2.0 * v * (e_tau - 1.0) - v * v)
    for name, val in (("quadratic", quad), ("damped", damped), ("cross", cross), ("penalty", penalty)):
        _check_finite(name, val)

    coef_x = w * (tau_x - (1.0 - a) * ref_x + 2.0 * lam * v)
    if cfg.discount is None:
        loss = quad - (1.0 - a) * damped - a * cross + penalty
        coef_xp = -a * w * ref_x
        points = np.concatenate([mb.xs, mb.xps])
        coefs = np.concatenate([coef_x, coef_xp])
    else:
        if init_points is None:
            raise ValueError("discounted mode needs initial-distribution points")
        g = cfg.discount
        init_vals = model.value_batch(init_points)
        init_term = float(init_vals.mean())
        _check_finite("initial-distribution", init_term)
        loss = quad - (1.0 - a) * damped - a * g * cross - a * (1.0 - g) * init_term + penalty
        coef_xp = -a * g * w * ref_x
        coef_init = np.full(init_points.shape[0], -a * (1.0 - g) / init_points.shape[0])
        points = np.concatenate([mb.xs, mb.xps, init_points])
        coefs = np.concatenate([coef_x, coef_xp, coef_init])

    grad_model = model.weighted_value_gradient(points, coefs)
    _check_finite("model gradient", grad_model)
    grad_dual = 2.0 * lam * (e_tau - 1.0 - v)
    _check_finite("dual gradient", grad_dual)
    return float(loss), grad_model, float(grad_dual)


def inner_optimize(
    state: SaddleState,
    ds: _data.TransitionDataset,
    cfg: VpmConfig,
    rng: np.random.Generator,
    init_term: InitialTermSpec | None = None,
) -> SaddleState:
    """Two-timescale inner loop: descent in the model, ascent in the dual.

    Runs ``cfg.inner_steps`` minibatch steps against the frozen reference;
    deterministic for a fixed generator state.
    """
    for _ in range(cfg.inner_steps):
        mb = _data.sample_minibatch(ds, cfg.batch_size, rng)
        init_pts = (
            init_term.sample(rng, cfg.batch_size) if cfg.discount is not None else None
        )
        loss, g_model, g_dual = loss_and_grads(state, mb, cfg, init_pts)
        if cfg.optimizer == "adam":
            state.model.apply_update(
                -adam_step(state.model_opt, g_model, cfg.lr_model, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            )
            state.dual += float(
                adam_step(state.dual_opt, np.array([g_dual]), cfg.lr_dual, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)[0]
            )
        else:
            state.model.apply_update(-cfg.lr_model * g_model)
            state.dual += cfg.lr_dual * g_dual
        state.last_loss = loss
    return state


def damped_closed_form_update(
    joint: _tabular.JointMatrix,
    probe: np.ndarray,
    tau: np.ndarray,
    penalty: float,
    alpha: float,
    discount: float | None = None,
    init_probs: np.ndarray | None = None,
) -> np.ndarray:
    """Exact minimizer of the damped saddle objective on known matrices.

    Solves the strictly convex quadratic over states where the probe is
    positive; for any positive penalty the solution is the damped power
    update and keeps the probe mean at one.  States the probe never visits
    must receive no update mass.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("step size must lie in (0, 1]")
    p = np.asarray(probe, dtype=float)
    t = np.asarray(tau, dtype=float)
    target_measure = alpha * (joint.tp.T @ t)
    if discount is not None:
        if init_probs is None:
            raise ValueError("discounted update needs the initial distribution vector")
        target_measure = alpha * (
            (1.0 - discount) * np.asarray(init_probs, dtype=float)
            + discount * (joint.tp.T @ t)
        )
    b_measure = (1.0 - alpha) * p * t + target_measure
    pos = p > 0.0
    bad = np.flatnonzero(~pos & (b_measure > 0.0))
    if bad.size:
        raise ValueError(
            f"probe support violation: update mass at state {bad[0]} where probe is zero"
        )
    ps = p[pos]
    a_mat = np.diag(ps) + 2.0 * penalty * np.outer(ps, ps)
    b = b_measure[pos] + 2.0 * penalty * ps
    out = np.zeros_like(p)
    out[pos] = np.linalg.solve(a_mat, b)
    return out


def exact_outer_step(
    state: SaddleState,
    joint: _tabular.JointMatrix,
    probe: np.ndarray,
    cfg: VpmConfig,
    init_probs: np.ndarray | None = None,
) -> None:
    """One outer step with the inner problem solved in closed form.

    Only tabular models support this; the new table is floored at a tiny
    positive value so the softplus parametrization stays well-defined.
    """
    model = state.model
    if not isinstance(model, TabularRatioModel):
        raise ValueError("the closed-form inner solver requires a tabular model")
    tau = model.ratio_table()
    mean = float(probe @ tau)
    if abs(mean - 1.0) > 1e-6:
        raise ValueError(f"ratio table has probe mean {mean!r}, expected 1")
    tau = tau / mean
    alpha = damping_step_size(cfg, state.outer_step)
    new = damped_closed_form_update(
        joint, probe, tau, cfg.penalty_weight, alpha, cfg.discount, init_probs
    )
    model.set_ratio_table(np.maximum(new, RATIO_FLOOR))
    state.dual = 0.0
    state.last_loss = float(
        0.5 * (probe @ (new * new)) - (probe @ (new * tau)) * (1.0 - alpha) - alpha * (tau @ (joint.tp @ new))
    )


@dataclass(frozen=True)
class DiagnosticsRow:
    """Per-outer-step trace: loss, probe mean of the model, dual value."""

    outer_step: int
    step_size: float
    loss: float
    probe_mean: float
    dual: float
    metric: float | None = None


def _probe_mean(model: RatioModel, ds: _data.TransitionDataset, cap: int = 10_000) -> float:
    idx = np.unique(np.linspace(0, ds.n - 1, min(ds.n, cap)).astype(int))
    return float(model.value_batch(ds.xs[idx]).mean())


def run_vpm(
    ds: _data.TransitionDataset,
    cfg: VpmConfig,
    model: RatioModel,
    ground_truth_hook: Callable[[RatioModel], float] | None = None,
    init_term: InitialTermSpec | None = None,
) -> tuple[RatioModel, list[DiagnosticsRow]]:
    """Train a ratio model by outer power steps over inner saddle optimization.

    Returns the trained model and one diagnostics row per outer step; rows
    are appended in order and safe for a concurrent reader.  Runs are
    bit-reproducible for a fixed seed and thread count.
    """
    cfg.validate()
    if cfg.discount is not None and init_term is None:
        raise ValueError("discounted mode needs an InitialTermSpec")
    rng = np.random.default_rng(cfg.seed)
    state = make_state(model, cfg)

    emp_joint = emp_probe = init_probs = None
    if cfg.inner_mode == "exact":
        if not isinstance(model, TabularRatioModel):
            raise ValueError("inner_mode='exact' requires a tabular model")
        emp_joint, emp_probe = _tabular.empirical_joint_from_data(ds, model.dims)
        if cfg.discount is not None:
            if init_term.probs is None:
                raise ValueError("exact discounted mode needs InitialTermSpec.probs")
            init_probs = _tabular.validate_probability(init_term.probs)

    rows: list[DiagnosticsRow] = []
    for t in range(1, cfg.outer_steps + 1):
        state.outer_step = t
        state.reference = state.model.snapshot()
        if not cfg.warm_start_dual:
            state.dual = 0.0
            if state.dual_opt is not None:
                state.dual_opt = AdamState.zeros(1)
        if cfg.inner_mode == "exact":
            exact_outer_step(state, emp_joint, emp_probe, cfg, init_probs)
        else:
            inner_optimize(state, ds, cfg, rng, init_term)
        probe_mean = _probe_mean(state.model, ds)
        metric = float(ground_truth_hook(state.model)) if ground_truth_hook else None
        row = DiagnosticsRow(
            outer_step=t,
            step_size=damping_step_size(cfg, t),
            loss=float("nan") if state.last_loss is None else state.last_loss,
            probe_mean=probe_mean,
            dual=state.dual,
            metric=metric,
        )
        if not np.isfinite(probe_mean):
            raise NumericsError(f"non-finite probe mean at outer step {t}")
        rows.append(row)
    return state.model, rows


def run_vpm_discounted(
    ds: _data.TransitionDataset,
    init_term: InitialTermSpec,
    cfg: VpmConfig,
    model: RatioModel,
    ground_truth_hook: Callable[[RatioModel], float] | None = None,
) -> tuple[RatioModel, list[DiagnosticsRow]]:
    """Discounted-occupancy variant; requires ``cfg.discount`` in [0, 1)."""
    if cfg.discount is None:
        raise ValueError("run_vpm_discounted requires cfg.discount")
    return run_vpm(ds, cfg, model, ground_truth_hook, init_term)


@dataclass(frozen=True)
class WeightedSample:
    """Points with strictly positive importance weights; the main artifact output."""

    points: np.ndarray
    raw_weights: np.ndarray

    def __post_init__(self):
        if np.any(self.raw_weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.raw_weights / self.raw_weights.sum()


def weighted_sample(model: RatioModel, points: np.ndarray) -> WeightedSample:
    """Evaluate the model on points and package them as a weighted sample."""
    pts = np.asarray(points, dtype=float)
    return WeightedSample(pts, model.value_batch(pts))


def resample(ws: WeightedSample, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` points with replacement, proportionally to the weights."""
    idx = rng.choice(ws.points.shape[0], size=size, p=ws.normalized_weights)
    return ws.points[idx]


def estimate_expectation(
    model: RatioModel,
    ds: _data.TransitionDataset,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
    self_normalized: bool = True,
) -> float:
    """Weighted-sample estimate of the stationary expectation of ``f``.

    ``f`` maps a batch of points to one value per point; when omitted the
    dataset rewards are used.  The default self-normalized form divides by
    the weight sum (exact for constants); the unnormalized form divides by n
    and coincides with it up to the probe mean of the trained model.
    """
    if ds.n == 0:
        raise ValueError("empty dataset")
    if f is None:
        if ds.rewards is None:
            raise ValueError("dataset has no rewards; pass an integrand")
        vals = ds.rewards
    else:
        vals = np.asarray(f(ds.xs), dtype=float)
        if vals.shape != (ds.n,):
            raise ValueError("integrand must return one value per point")
    w = model.value_batch(ds.xs)
    total = float(w @ vals)
    return total / float(w.sum()) if self_normalized else total / ds.n


def exact_pair_minibatch(joint: _tabular.JointMatrix) -> _data.Minibatch:
    """Synthetic minibatch enumerating all pairs with their exact joint weights.

    Feeding this to :func:`loss_and_grads` evaluates the objective under the
    exact distributions rather than a sample (points are one-dimensional
    state indices).
    """
    n = joint.n_states
    i, j = np.nonzero(joint.tp)
    w = joint.tp[i, j]
    return _data.Minibatch(
        indices=None,
        xs=i.astype(float)[:, None],
        xps=j.astype(float)[:, None],
        weights=w / w.sum(),
    )
