"""Transition datasets: construction, minibatch sampling, CSV round-trip,
and composition with a target policy.

A dataset is a fixed batch of pairs (x, x') where each x was drawn from an
unknown probe distribution and x' from the transition kernel conditioned on
x.  Datasets are immutable after construction and safe to share across
threads; every consumer owns its own random generator.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TransitionDataset:
    """Fixed batch of transitions (x, x'), optionally with per-row rewards."""

    xs: np.ndarray
    xps: np.ndarray
    rewards: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]


@dataclass(frozen=True)
class Minibatch:
    """Resolved view of dataset rows.

    ``weights`` are per-row expectation weights summing to one; ``None``
    means uniform.  Synthetic (exactly weighted) minibatches carry no
    ``indices``.
    """

    indices: np.ndarray | None
    xs: np.ndarray
    xps: np.ndarray
    rewards: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.xs.shape[0]


def _coerce_points(rows, label: str) -> np.ndarray:
    """Convert a sequence of points (or an (n, d) array) to a float matrix.

    Reports the first offending row on ragged dimensions or non-finite
    coordinates.
    """
    if isinstance(rows, np.ndarray) and rows.dtype != object:
        arr = np.asarray(rows, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"{label} must be a list of coordinate vectors")
        bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
        if bad.size:
            raise ValueError(f"{label} row {bad[0]} contains a non-finite coordinate")
        return arr

    out = []
    dim = None
    for i, row in enumerate(rows):
        p = np.atleast_1d(np.asarray(row, dtype=float))
        if p.ndim != 1:
            raise ValueError(f"{label} row {i} is not a flat coordinate vector")
        if dim is None:
            dim = p.size
        elif p.size != dim:
            raise ValueError(f"{label} row {i} has dimension {p.size}, expected {dim}")
        if not np.all(np.isfinite(p)):
            raise ValueError(f"{label} row {i} contains a non-finite coordinate")
        out.append(p)
    if not out:
        raise ValueError(f"empty {label} input")
    return np.stack(out)


def from_pairs(xs, xps, rewards=None) -> TransitionDataset:
    """Validate and assemble a transition dataset.

    Raises ValueError on empty input, dimension mismatch between any two
    rows, or non-finite values, naming the offending row.
    """
    xs_a = _coerce_points(xs, "x")
    xps_a = _coerce_points(xps, "x'")
    if xs_a.shape[0] == 0:
        raise ValueError("empty dataset")
    if xs_a.shape[0] != xps_a.shape[0]:
        raise ValueError(f"{xs_a.shape[0]} x rows but {xps_a.shape[0]} x' rows")
    if xs_a.shape[1] != xps_a.shape[1]:
        raise ValueError(
            f"x dimension {xs_a.shape[1]} differs from x' dimension {xps_a.shape[1]}"
        )
    r = None
    if rewards is not None:
        r = np.array(rewards, dtype=float).reshape(-1)
        if r.size != xs_a.shape[0]:
            raise ValueError(f"rewards length {r.size} does not match n={xs_a.shape[0]}")
        bad = np.flatnonzero(~np.isfinite(r))
        if bad.size:
            raise ValueError(f"non-finite reward at row {bad[0]}")
        r = _freeze(r)
    return TransitionDataset(_freeze(xs_a.copy()), _freeze(xps_a.copy()), r)


def sample_minibatch(ds: TransitionDataset, batch_size: int, rng: np.random.Generator) -> Minibatch:
    """Draw ``batch_size`` rows uniformly with replacement (seeded, reproducible)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = rng.integers(0, ds.n, size=batch_size)
    r = ds.rewards[idx] if ds.rewards is not None else None
    return Minibatch(idx, ds.xs[idx], ds.xps[idx], r)


def compose_with_policy(
    ds: TransitionDataset,
    policy: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    n_state_coords: int,
    rng: np.random.Generator,
) -> TransitionDataset:
    """Replace the action coordinates of every x' with a draw from ``policy``.

    The first ``n_state_coords`` coordinates of x' are kept as the state s';
    ``policy(states, rng)`` must return one action row per state row.  The x
    rows and rewards are untouched.  With zero action coordinates the dataset
    is returned unchanged.
    """
    d = ds.dim
    if not 0 <= n_state_coords <= d:
        raise ValueError(f"state/action split {n_state_coords} out of range for dimension {d}")
    if n_state_coords == d:
        return TransitionDataset(ds.xs, ds.xps, ds.rewards)
    states = ds.xps[:, :n_state_coords]
    actions = np.asarray(policy(states, rng), dtype=float)
    if actions.ndim == 1:
        actions = actions[:, None]
    if actions.shape != (ds.n, d - n_state_coords):
        raise ValueError(
            f"policy returned shape {actions.shape}, expected {(ds.n, d - n_state_coords)}"
        )
    xps = np.concatenate([states, actions], axis=1)
    return from_pairs(ds.xs, xps, ds.rewards)


def state_indices(points: np.ndarray, dims) -> np.ndarray:
    """Cast points to flat integer state indices on a mixed-radix grid.

    Every coordinate must be exactly integral and inside ``[0, dims[k])``;
    the first offending row is reported.  A plain int ``dims`` describes a
    one-dimensional state space.
    """
    dims = (dims,) if np.isscalar(dims) else tuple(int(s) for s in dims)
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[1] != len(dims):
        raise ValueError(f"points have dimension {arr.shape[1]}, state grid has {len(dims)}")
    rounded = np.rint(arr)
    bad = np.flatnonzero(~np.all(rounded == arr, axis=1))
    if bad.size:
        raise ValueError(f"non-integer state at row {bad[0]}: {arr[bad[0]]}")
    bad = np.flatnonzero(
        np.any((rounded < 0) | (rounded >= np.asarray(dims, dtype=float)), axis=1)
    )
    if bad.size:
        raise ValueError(f"state out of range at row {bad[0]}: {arr[bad[0]]} for grid {dims}")
    ints = rounded.astype(np.int64)
    return np.ravel_multi_index(tuple(ints[:, k] for k in range(len(dims))), dims)


def save_csv(ds: TransitionDataset, path) -> None:
    """Write a dataset; doubles are written with round-trip-exact precision.

    Layout: a name header ``d,n,has_rewards``, a value row, then one row
    ``x_1..x_d, xp_1..xp_d[, r]`` per transition.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "n", "has_rewards"])
        w.writerow([ds.dim, ds.n, int(ds.rewards is not None)])
        has_r = ds.rewards is not None
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.xs[i]]
            row += [repr(float(v)) for v in ds.xps[i]]
            if has_r:
                row.append(repr(float(ds.rewards[i])))
            w.writerow(row)


def load_csv(path) -> TransitionDataset:
    """Read a dataset written by :func:`save_csv`; exact inverse for finite doubles."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
            values = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header") from None
        if [s.strip() for s in names] != ["d", "n", "has_rewards"]:
            raise ValueError(f"{path}: line 1: expected header 'd,n,has_rewards'")
        try:
            d, n, has_r = (int(v) for v in values)
        except ValueError:
            raise ValueError(f"{path}: line 2: malformed header values {values!r}") from None
        width = 2 * d + (1 if has_r else 0)
        xs = np.empty((n, d))
        xps = np.empty((n, d))
        rewards = np.empty(n) if has_r else None
        count = 0
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if count >= n:
                raise ValueError(f"{path}: line {lineno}: more rows than declared n={n}")
            if len(row) != width:
                raise ValueError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed number") from None
            xs[count] = vals[:d]
            xps[count] = vals[d : 2 * d]
            if has_r:
                rewards[count] = vals[2 * d]
            count += 1
        if count != n:
            raise ValueError(f"{path}: {count} data rows but header declares n={n}")
    return from_pairs(xs, xps, rewards)
