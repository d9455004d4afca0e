"""Differentiable nonnegative ratio parametrizations with analytic gradients.

Three kinds are supported: per-state tabular weights, random-Fourier-feature
linear models, and small fully-connected networks with rectifier hidden
units.  All end in a softplus so values are strictly positive, and all
parameters are addressable as one flat vector so optimizers stay
architecture-agnostic.  A model instance is single-writer: value and
gradient evaluation are read-only and may run concurrently, but not with
``apply_update``.
"""
from __future__ import annotations

import json

import numpy as np
from scipy.special import expit as sigmoid


def softplus(x: np.ndarray) -> np.ndarray:
    # floored at the smallest normal double so values stay strictly positive
    return np.maximum(np.logaddexp(0.0, x), np.finfo(float).tiny)


def softplus_inv(y) -> np.ndarray:
    """Inverse of softplus for y > 0, numerically stable across magnitudes."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("softplus_inv requires positive input")
    small = y < 30.0
    out = np.where(small, np.log(np.expm1(np.where(small, y, 1.0))), y)
    return out


class RatioModel:
    """Base class: a positive function of points with flat-parameter gradients."""

    kind: str = ""

    def __init__(self, input_dim: int, params: list[np.ndarray]):
        self.input_dim = int(input_dim)
        self._params = params
        self._shapes = [p.shape for p in params]
        self._sizes = [p.size for p in params]

    # -- parameter plumbing ------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(self._sizes)

    @property
    def theta(self) -> np.ndarray:
        """Flat copy of all parameters, in declaration order."""
        return np.concatenate([p.ravel() for p in self._params])

    def apply_update(self, delta: np.ndarray) -> None:
        """In-place ``theta += delta``; rejects wrong sizes and non-finite entries."""
        d = np.asarray(delta, dtype=float).ravel()
        if d.size != self.n_params:
            raise ValueError(f"update has {d.size} entries, model has {self.n_params}")
        bad = np.flatnonzero(~np.isfinite(d))
        if bad.size:
            raise ValueError(f"non-finite update at coordinate {bad[0]}")
        off = 0
        for p, size in zip(self._params, self._sizes):
            p += d[off : off + size].reshape(p.shape)
            off += size

    def snapshot(self) -> "RatioModel":
        """Independent deep copy; later updates to either side do not leak."""
        return self._clone()

    def __deepcopy__(self, memo) -> "RatioModel":
        return self._clone()

    # -- interface implemented by subclasses --------------------------------

    def _clone(self) -> "RatioModel":
        raise NotImplementedError

    def value_batch(self, xs: np.ndarray) -> np.ndarray:
        """Positive values, one per input point."""
        raise NotImplementedError

    def weighted_value_gradient(self, xs: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Flat gradient of ``sum_k w_k * value(x_k)`` with respect to theta."""
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    # -- checkpointing -------------------------------------------------------

    def save(self, path) -> None:
        """Write an exact checkpoint (architecture descriptor plus raw doubles)."""
        arrays = {f"param_{i}": p for i, p in enumerate(self._params)}
        np.savez(
            path,
            kind=self.kind,
            descriptor=json.dumps(self.descriptor()),
            **arrays,
            **self._fixed_arrays(),
        )

    def _fixed_arrays(self) -> dict:
        return {}

    def _check_points(self, xs) -> np.ndarray:
        a = np.asarray(xs, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise ValueError(f"points of dimension {a.shape[-1]}, model expects {self.input_dim}")
        return a


class TabularRatioModel(RatioModel):
    """One pre-activation scalar per state of a finite mixed-radix grid."""

    kind = "tabular-weights"

    def __init__(self, dims, theta: np.ndarray | None = None):
        self.dims = (dims,) if np.isscalar(dims) else tuple(int(s) for s in dims)
        n = int(np.prod(self.dims))
        if theta is None:
            theta = np.full(n, softplus_inv(1.0))
        super().__init__(len(self.dims), [np.asarray(theta, dtype=float).copy()])

    def _indices(self, xs) -> np.ndarray:
        from .data import state_indices

        return state_indices(self._check_points(xs), self.dims)

    def value_batch(self, xs) -> np.ndarray:
        return softplus(self._params[0][self._indices(xs)])

    def weighted_value_gradient(self, xs, w) -> np.ndarray:
        idx = self._indices(xs)
        w = np.asarray(w, dtype=float)
        if w.shape != idx.shape:
            raise ValueError("one weight per point required")
        g = np.zeros_like(self._params[0])
        np.add.at(g, idx, w * sigmoid(self._params[0][idx]))
        return g

    def ratio_table(self) -> np.ndarray:
        """Values at every grid state, flattened in grid order."""
        return softplus(self._params[0])

    def set_ratio_table(self, tau: np.ndarray) -> None:
        """Set parameters so the model equals ``tau`` (strictly positive) exactly."""
        t = np.asarray(tau, dtype=float)
        if t.shape != self._params[0].shape:
            raise ValueError("table shape mismatch")
        self._params[0][:] = softplus_inv(t)

    def descriptor(self) -> dict:
        return {"dims": list(self.dims)}

    def _clone(self) -> "TabularRatioModel":
        return TabularRatioModel(self.dims, self._params[0])


class LinearRatioModel(RatioModel):
    """Random-Fourier-feature linear model: softplus(w . phi(x) + b).

    The feature map (frequencies and phases) is drawn once at construction
    and is not trainable; only the output weights and bias are.
    """

    kind = "linear-features"

    def __init__(
        self,
        input_dim: int,
        n_features: int = 128,
        bandwidth: float = 1.0,
        rng: np.random.Generator | None = None,
        _fixed: tuple[np.ndarray, np.ndarray] | None = None,
        _theta: np.ndarray | None = None,
    ):
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        self.n_features = int(n_features)
        self.bandwidth = float(bandwidth)
        if _fixed is not None:
            self.omega, self.phase = (np.asarray(a, dtype=float) for a in _fixed)
        else:
            if rng is None:
                raise ValueError("a generator is required to draw the feature map")
            self.omega = rng.standard_normal((input_dim, n_features)) / bandwidth
            self.phase = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
        if _theta is not None:
            w = np.asarray(_theta[:-1], dtype=float).copy()
            b = np.asarray(_theta[-1:], dtype=float).copy()
        else:
            scale = 0.01 / np.sqrt(n_features)
            w = (rng.uniform(-1.0, 1.0, size=n_features) * scale) if rng is not None else np.zeros(n_features)
            b = np.array([softplus_inv(1.0)])
        super().__init__(input_dim, [w, b])

    def _features(self, xs) -> np.ndarray:
        a = self._check_points(xs)
        return np.sqrt(2.0 / self.n_features) * np.cos(a @ self.omega + self.phase)

    def value_batch(self, xs) -> np.ndarray:
        phi = self._features(xs)
        return softplus(phi @ self._params[0] + self._params[1][0])

    def weighted_value_gradient(self, xs, w) -> np.ndarray:
        phi = self._features(xs)
        z = phi @ self._params[0] + self._params[1][0]
        w = np.asarray(w, dtype=float)
        if w.shape != z.shape:
            raise ValueError("one weight per point required")
        coef = w * sigmoid(z)
        return np.concatenate([phi.T @ coef, [coef.sum()]])

    def descriptor(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "n_features": self.n_features,
            "bandwidth": self.bandwidth,
        }

    def _fixed_arrays(self) -> dict:
        return {"omega": self.omega, "phase": self.phase}

    def _clone(self) -> "LinearRatioModel":
        return LinearRatioModel(
            self.input_dim,
            self.n_features,
            self.bandwidth,
            _fixed=(self.omega, self.phase),
            _theta=self.theta,
        )


# -- shared fully-connected core (also used by the model-based baseline) ----


def mlp_init(sizes: list[int], out_dim: int, rng: np.random.Generator, out_scale: float = 0.01):
    """Fan-in-scaled uniform init; the output layer is shrunk by ``out_scale``."""
    params = []
    dims = list(sizes) + [out_dim]
    for l in range(len(dims) - 1):
        fan_in = dims[l]
        bound = 1.0 / np.sqrt(fan_in)
        scale = out_scale if l == len(dims) - 2 else 1.0
        params.append(rng.uniform(-bound, bound, size=(dims[l], dims[l + 1])) * scale)
        params.append(np.zeros(dims[l + 1]))
    return params


def mlp_forward(params: list[np.ndarray], x: np.ndarray):
    """Forward pass with rectifier hidden units; returns (output, caches)."""
    acts = [x]
    pres = []
    h = x
    n_layers = len(params) // 2
    for l in range(n_layers):
        z = h @ params[2 * l] + params[2 * l + 1]
        if l < n_layers - 1:
            pres.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return z, (acts, pres)


def mlp_backward(params: list[np.ndarray], caches, out_grad: np.ndarray) -> list[np.ndarray]:
    """Gradients of ``sum(out_grad * output)`` for every weight and bias."""
    acts, pres = caches
    n_layers = len(params) // 2
    grads = [None] * len(params)
    d = out_grad
    for l in range(n_layers - 1, -1, -1):
        grads[2 * l] = acts[l].T @ d
        grads[2 * l + 1] = d.sum(axis=0)
        if l > 0:
            d = (d @ params[2 * l].T) * (pres[l - 1] > 0.0)
    return grads


class MlpRatioModel(RatioModel):
    """Fully-connected ratio network: rectifier hidden layers, softplus output.

    ``layer_sizes`` lists the input dimension followed by the hidden widths;
    a scalar output head is appended internally.  The output bias starts at
    softplus_inv(1) so the initial model is approximately one everywhere.
    """

    kind = "mlp"

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None, params=None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValueError("need the input dimension and at least one hidden layer")
        if params is None:
            if rng is None:
                raise ValueError("a generator is required to initialize the network")
            params = mlp_init(self.layer_sizes, 1, rng)
            params[-1][:] = softplus_inv(1.0)
        super().__init__(self.layer_sizes[0], [np.asarray(p, dtype=float).copy() for p in params])

    def value_batch(self, xs) -> np.ndarray:
        z, _ = mlp_forward(self._params, self._check_points(xs))
        return softplus(z[:, 0])

    def weighted_value_gradient(self, xs, w) -> np.ndarray:
        a = self._check_points(xs)
        z, caches = mlp_forward(self._params, a)
        w = np.asarray(w, dtype=float)
        if w.shape != (a.shape[0],):
            raise ValueError("one weight per point required")
        out_grad = (w * sigmoid(z[:, 0]))[:, None]
        grads = mlp_backward(self._params, caches, out_grad)
        return np.concatenate([g.ravel() for g in grads])

    def descriptor(self) -> dict:
        return {"layer_sizes": self.layer_sizes}

    def _clone(self) -> "MlpRatioModel":
        return MlpRatioModel(self.layer_sizes, params=self._params)


def load_model(path) -> RatioModel:
    """Load a checkpoint written by :meth:`RatioModel.save`; round-trip exact."""
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["kind"])
        desc = json.loads(str(z["descriptor"]))
        params = [z[f"param_{i}"] for i in range(sum(1 for k in z.files if k.startswith("param_")))]
        if kind == TabularRatioModel.kind:
            return TabularRatioModel(desc["dims"], theta=params[0])
        if kind == LinearRatioModel.kind:
            theta = np.concatenate([params[0].ravel(), params[1].ravel()])
            return LinearRatioModel(
                desc["input_dim"],
                desc["n_features"],
                desc["bandwidth"],
                _fixed=(z["omega"], z["phase"]),
                _theta=theta,
            )
        if kind == MlpRatioModel.kind:
            return MlpRatioModel(desc["layer_sizes"], params=params)
    raise ValueError(f"unknown model kind {kind!r}")
