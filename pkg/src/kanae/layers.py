"""Dense and KAN layers with hand-written backward passes.

Each layer owns a dict of parameter arrays.  ``forward`` is pure: it returns
the output and a cache, and never mutates the layer.  ``backward`` maps an
upstream gradient ``dY`` to gradients of ``sum(dY * Y)`` with respect to every
parameter and the input.

Forward matrix products go through :func:`_rowwise_matmul` so that a sample's
output does not depend on which other rows share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import (
    BSplineGrid,
    FourierSpec,
    RbfGrid,
    _bspline_with_dx,
    dog_wavelet,
    fourier_features,
    fourier_features_dx,
    rbf_basis,
    rbf_basis_dx,
    silu,
    silu_dx,
)
from .errors import ConfigurationError, ContractError, NumericError

__all__ = [
    "Layer",
    "DenseLayer",
    "EfficientKanLayer",
    "FastKanLayer",
    "FourierKanLayer",
    "WavKanLayer",
    "LayerGradients",
    "layer_forward",
    "layer_backward",
    "l1_entropy_penalty",
    "l1_entropy_penalty_grad",
    "orthogonality_penalty",
    "orthogonality_penalty_grad",
    "LAYER_KINDS",
]

SCALE_FLOOR = 1e-3
NORM_EPS = 1e-5


def _rowwise_matmul(A: np.ndarray, W: np.ndarray) -> np.ndarray:
    # einsum avoids BLAS, whose gemv/gemm kernels round differently by batch size
    return np.einsum("bi,oi->bo", A, W)


def _check_input(X, n_in: int, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != n_in:
        raise ContractError(f"{name}: expected input of shape (batch, {n_in}), got {X.shape}")
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NumericError(f"{name}: non-finite input in batch row {row}")
    return X


@dataclass
class LayerGradients:
    """Gradients for one layer: one array per parameter plus the input gradient."""

    params: dict
    input: np.ndarray

    def __getitem__(self, name):
        if name == "input":
            return self.input
        return self.params[name]


@dataclass
class _Cache:
    owner: int
    batch: int
    data: dict = field(default_factory=dict)


class Layer:
    kind = "layer"

    def __init__(self, n_in: int, n_out: int):
        if n_in < 1 or n_out < 1:
            raise ConfigurationError(f"layer sizes must be positive, got {n_in}->{n_out}")
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def count_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def config(self) -> dict:
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}

    def _start(self, X):
        X = _check_input(X, self.n_in, self.kind)
        return X, _Cache(owner=id(self), batch=X.shape[0])

    def _check_backward(self, cache, dY) -> np.ndarray:
        if not isinstance(cache, _Cache) or cache.owner != id(self):
            raise ContractError(f"{self.kind}: cache was not produced by this layer")
        dY = np.asarray(dY, dtype=float)
        if dY.shape != (cache.batch, self.n_out):
            raise ContractError(
                f"{self.kind}: dY shape {dY.shape} does not match ({cache.batch}, {self.n_out})"
            )
        return dY

    def forward(self, X, training: bool = False):
        raise NotImplementedError

    def backward(self, cache, dY) -> LayerGradients:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.n_in}->{self.n_out}, params={self.count_parameters()})"


class DenseLayer(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, activation="relu", rng=None):
        super().__init__(n_in, n_out)
        if activation not in ("relu", "identity"):
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.activation = activation
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(n_in)
        self.params["weight"] = rng.uniform(-bound, bound, (n_out, n_in))
        self.params["bias"] = rng.uniform(-bound, bound, n_out)

    def config(self):
        return {**super().config(), "activation": self.activation}

    def forward(self, X, training=False):
        X, cache = self._start(X)
        Z = _rowwise_matmul(X, self.params["weight"]) + self.params["bias"]
        Y = np.maximum(Z, 0.0) if self.activation == "relu" else Z
        cache.data.update(X=X, Z=Z)
        return Y, cache

    def backward(self, cache, dY):
        dY = self._check_backward(cache, dY)
        X, Z = cache.data["X"], cache.data["Z"]
        dZ = dY * (Z > 0) if self.activation == "relu" else dY
        return LayerGradients(
            params={"weight": dZ.T @ X, "bias": dZ.sum(axis=0)},
            input=dZ @ self.params["weight"],
        )


class EfficientKanLayer(Layer):
    """SiLU base path plus a B-spline expansion on every edge; no bias, no spline scaler."""

    kind = "efficientkan"

    def __init__(self, n_in, n_out, grid: BSplineGrid | None = None, rng=None):
        super().__init__(n_in, n_out)
        self.grid = grid or BSplineGrid()
        g = self.grid.n_basis
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(n_in)
        self.params["base_weight"] = rng.uniform(-bound, bound, (n_out, n_in))
        c = 0.1 / np.sqrt(g)
        self.params["spline_coeffs"] = rng.uniform(-c, c, (n_out, n_in, g))

    def config(self):
        gr = self.grid
        return {
            **super().config(),
            "grid_size": gr.grid_size,
            "order": gr.order,
            "range": [gr.range_lo, gr.range_hi],
        }

    def forward(self, X, training=False):
        X, cache = self._start(X)
        B, dB = _bspline_with_dx(X, self.grid)
        b = X.shape[0]
        theta = self.params["spline_coeffs"].reshape(self.n_out, -1)
        Y = _rowwise_matmul(silu(X), self.params["base_weight"]) + _rowwise_matmul(
            B.reshape(b, -1), theta
        )
        cache.data.update(X=X, B=B, dB=dB)
        return Y, cache

    def backward(self, cache, dY):
        dY = self._check_backward(cache, dY)
        X, B, dB = cache.data["X"], cache.data["B"], cache.data["dB"]
        b, g = X.shape[0], self.grid.n_basis
        w, theta = self.params["base_weight"], self.params["spline_coeffs"]
        d_theta = (dY.T @ B.reshape(b, -1)).reshape(theta.shape)
        d_spline_in = ((dY @ theta.reshape(self.n_out, -1)).reshape(b, self.n_in, g) * dB).sum(-1)
        return LayerGradients(
            params={"base_weight": dY.T @ silu(X), "spline_coeffs": d_theta},
            input=(dY @ w) * silu_dx(X) + d_spline_in,
        )


class FastKanLayer(Layer):
    """Layer-normalised Gaussian RBF expansion plus a biased SiLU base path."""

    kind = "fastkan"

    def __init__(self, n_in, n_out, grid: RbfGrid | None = None, rng=None):
        super().__init__(n_in, n_out)
        self.grid = grid or RbfGrid.uniform(5, -2.0, 2.0)
        g = self.grid.n_basis
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(n_in)
        self.params["base_weight"] = rng.uniform(-bound, bound, (n_out, n_in))
        self.params["base_bias"] = rng.uniform(-bound, bound, n_out)
        c = 0.1 / np.sqrt(g)
        self.params["rbf_coeffs"] = rng.uniform(-c, c, (n_out, n_in, g))
        self.params["norm_gain"] = np.ones(n_in)
        self.params["norm_shift"] = np.zeros(n_in)

    def config(self):
        return {**super().config(), "centers": list(self.grid.centers), "width": self.grid.width}

    def forward(self, X, training=False):
        X, cache = self._start(X)
        mu = X.mean(axis=1, keepdims=True)
        r = 1.0 / np.sqrt(X.var(axis=1, keepdims=True) + NORM_EPS)
        Xh = (X - mu) * r
        U = Xh * self.params["norm_gain"] + self.params["norm_shift"]
        Phi = rbf_basis(U, self.grid)
        b = X.shape[0]
        Y = (
            _rowwise_matmul(silu(X), self.params["base_weight"])
            + self.params["base_bias"]
            + _rowwise_matmul(Phi.reshape(b, -1), self.params["rbf_coeffs"].reshape(self.n_out, -1))
        )
        cache.data.update(X=X, Xh=Xh, r=r, U=U, Phi=Phi)
        return Y, cache

    def backward(self, cache, dY):
        dY = self._check_backward(cache, dY)
        d = cache.data
        X, Xh, r, U, Phi = d["X"], d["Xh"], d["r"], d["U"], d["Phi"]
        b, g = X.shape[0], self.grid.n_basis
        theta = self.params["rbf_coeffs"]
        dPhi = (dY @ theta.reshape(self.n_out, -1)).reshape(b, self.n_in, g)
        dU = (dPhi * rbf_basis_dx(U, self.grid)).sum(-1)
        dXh = dU * self.params["norm_gain"]
        dX_norm = r * (
            dXh - dXh.mean(axis=1, keepdims=True) - Xh * (dXh * Xh).mean(axis=1, keepdims=True)
        )
        return LayerGradients(
            params={
                "base_weight": dY.T @ silu(X),
                "base_bias": dY.sum(axis=0),
                "rbf_coeffs": (dY.T @ Phi.reshape(b, -1)).reshape(theta.shape),
                "norm_gain": (dU * Xh).sum(axis=0),
                "norm_shift": dU.sum(axis=0),
            },
            input=dX_norm + (dY @ self.params["base_weight"]) * silu_dx(X),
        )


class FourierKanLayer(Layer):
    """Truncated Fourier series on every edge with one bias per output node."""

    kind = "fourierkan"

    def __init__(self, n_in, n_out, spec: FourierSpec | None = None, rng=None):
        super().__init__(n_in, n_out)
        self.spec = spec or FourierSpec()
        m = self.spec.modes
        rng = np.random.default_rng(rng)
        c = 0.1 / np.sqrt(self.spec.n_basis)
        self.params["cos_coeffs"] = rng.uniform(-c, c, (n_out, n_in, m))
        self.params["sin_coeffs"] = rng.uniform(-c, c, (n_out, n_in, m))
        self.params["bias"] = np.zeros(n_out)

    def config(self):
        return {**super().config(), "modes": self.spec.modes}

    def _coeffs(self) -> np.ndarray:
        return np.concatenate([self.params["cos_coeffs"], self.params["sin_coeffs"]], axis=-1)

    def forward(self, X, training=False):
        X, cache = self._start(X)
        F = fourier_features(X, self.spec)
        b = X.shape[0]
        Y = _rowwise_matmul(F.reshape(b, -1), self._coeffs().reshape(self.n_out, -1)) + self.params["bias"]
        cache.data.update(X=X, F=F)
        return Y, cache

    def backward(self, cache, dY):
        dY = self._check_backward(cache, dY)
        X, F = cache.data["X"], cache.data["F"]
        b, m = X.shape[0], self.spec.modes
        C = self._coeffs()
        dC = (dY.T @ F.reshape(b, -1)).reshape(C.shape)
        dF = (dY @ C.reshape(self.n_out, -1)).reshape(b, self.n_in, 2 * m)
        return LayerGradients(
            params={"cos_coeffs": dC[..., :m], "sin_coeffs": dC[..., m:], "bias": dY.sum(axis=0)},
            input=(dF * fourier_features_dx(X, self.spec)).sum(-1),
        )


class WavKanLayer(Layer):
    """One DoG wavelet per edge plus a bias-free SiLU path, batch-normalised at the output.

    Training-mode forward uses batch statistics; inference uses the running
    statistics, which only change through :meth:`update_running_stats`.
    """

    kind = "wavkan"
    momentum = 0.1

    def __init__(self, n_in, n_out, rng=None):
        super().__init__(n_in, n_out)
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(n_in)
        self.params["wavelet_weight"] = rng.uniform(-bound, bound, (n_out, n_in))
        self.params["translation"] = np.zeros((n_out, n_in))
        self.params["scale"] = np.ones((n_out, n_in))
        self.params["base_weight"] = rng.uniform(-bound, bound, (n_out, n_in))
        self.params["norm_gain"] = np.ones(n_out)
        self.params["norm_shift"] = np.zeros(n_out)
        self.buffers["running_mean"] = np.zeros(n_out)
        self.buffers["running_var"] = np.ones(n_out)

    def forward(self, X, training=False):
        X, cache = self._start(X)
        p = self.params
        s = np.maximum(p["scale"], SCALE_FLOOR)
        U = (X[:, None, :] - p["translation"]) / s
        psi, dpsi = dog_wavelet(U)
        H = (psi * p["wavelet_weight"]).sum(-1) + _rowwise_matmul(silu(X), p["base_weight"])
        if training:
            mean, var = H.mean(axis=0), H.var(axis=0)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        Hn = (H - mean) * inv
        Y = Hn * p["norm_gain"] + p["norm_shift"]
        cache.data.update(X=X, s=s, U=U, psi=psi, dpsi=dpsi, H=H, Hn=Hn, inv=inv, training=training)
        return Y, cache

    def update_running_stats(self, cache) -> None:
        """Fold the batch statistics of a training-mode forward into the running averages."""
        if not cache.data.get("training") or cache.batch < 2:
            return
        H = cache.data["H"]
        m = self.momentum
        self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * H.mean(axis=0)
        self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * H.var(axis=0, ddof=1)

    def backward(self, cache, dY):
        dY = self._check_backward(cache, dY)
        d = cache.data
        X, s, U, psi, dpsi, Hn, inv = d["X"], d["s"], d["U"], d["psi"], d["dpsi"], d["Hn"], d["inv"]
        p = self.params
        dHn = dY * p["norm_gain"]
        if d["training"]:
            dH = inv * (dHn - dHn.mean(axis=0) - Hn * (dHn * Hn).mean(axis=0))
        else:
            dH = dHn * inv
        dU = dH[:, :, None] * p["wavelet_weight"] * dpsi
        active = p["scale"] > SCALE_FLOOR
        return LayerGradients(
            params={
                "wavelet_weight": np.einsum("bo,boi->oi", dH, psi),
                "translation": -dU.sum(axis=0) / s,
                "scale": -(dU * U).sum(axis=0) / s * active,
                "base_weight": dH.T @ silu(X),
                "norm_gain": (dY * Hn).sum(axis=0),
                "norm_shift": dY.sum(axis=0),
            },
            input=(dU / s).sum(axis=1) + (dH @ p["base_weight"]) * silu_dx(X),
        )


LAYER_KINDS = {
    cls.kind: cls for cls in (DenseLayer, EfficientKanLayer, FastKanLayer, FourierKanLayer, WavKanLayer)
}


def layer_forward(layer: Layer, X, training: bool = False):
    return layer.forward(X, training=training)


def layer_backward(layer: Layer, cache, dY) -> LayerGradients:
    return layer.backward(cache, dY)


def _edge_activity(theta: np.ndarray) -> np.ndarray:
    return np.abs(theta).mean(axis=-1)


def l1_entropy_penalty(layer: EfficientKanLayer) -> tuple[float, float]:
    """Total edge activity of the spline coefficients and the entropy of its distribution.

    A layer with all-zero coefficients returns ``(0.0, 0.0)``.
    """
    a = _edge_activity(layer.params["spline_coeffs"])
    total = float(a.sum())
    if total == 0.0:
        return 0.0, 0.0
    p = a[a > 0] / total
    return total, float(-(p * np.log(p)).sum())


def l1_entropy_penalty_grad(layer: EfficientKanLayer) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of both penalties with respect to ``spline_coeffs``.

    Coefficients at exactly zero get a zero subgradient.
    """
    theta = layer.params["spline_coeffs"]
    g = theta.shape[-1]
    sign = np.sign(theta) / g
    a = _edge_activity(theta)
    total = a.sum()
    if total == 0.0:
        return sign, np.zeros_like(theta)
    _, ent = l1_entropy_penalty(layer)
    with np.errstate(divide="ignore"):
        d_a = np.where(a > 0, (-np.log(a / total) - ent) / total, 0.0)
    return sign, d_a[..., None] * sign


def orthogonality_penalty(Z) -> float:
    """Squared Frobenius distance between the latent Gram matrix and the identity."""
    Z = np.asarray(Z, dtype=float)
    G = Z.T @ Z - np.eye(Z.shape[1])
    return float((G * G).sum())


def orthogonality_penalty_grad(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    return 4.0 * Z @ (Z.T @ Z - np.eye(Z.shape[1]))
