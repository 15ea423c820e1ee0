"""Autoencoder assembly, loss, parameter counting and the model file format."""

from __future__ import annotations

import copy
import io
import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import BSplineGrid, FourierSpec, RbfGrid
from .errors import ConfigurationError, ContractError, ModelFileError, NumericError
from .layers import (
    DenseLayer,
    EfficientKanLayer,
    FastKanLayer,
    FourierKanLayer,
    Layer,
    WavKanLayer,
    l1_entropy_penalty,
    l1_entropy_penalty_grad,
    orthogonality_penalty,
    orthogonality_penalty_grad,
)

__all__ = [
    "VARIANTS",
    "AeArchitecture",
    "LossBreakdown",
    "Model",
    "default_architecture",
    "build_model",
    "reconstruct",
    "loss",
    "count_parameters",
    "save_model",
    "load_model",
    "load_container",
    "MAGIC",
    "FORMAT_VERSION",
]

VARIANTS = ("oae", "efficientkan", "fastkan", "fourierkan", "wavkan")

# Regularisation strengths tuned per variant (orthogonality for the OAE,
# activity sparsity for EfficientKAN).
_DEFAULT_LAMBDAS = {
    "oae": {"lambda_orth": 1.00},
    "efficientkan": {"lambda_l1": 1.93e-4, "lambda_entropy": 7.73e-4},
}

_VARIANT_ALIASES = {
    "oae": "oae",
    "efficientkan": "efficientkan",
    "efficientkan-ae": "efficientkan",
    "fastkan": "fastkan",
    "fastkan-ae": "fastkan",
    "fourierkan": "fourierkan",
    "fourierkan-ae": "fourierkan",
    "wavkan": "wavkan",
    "wavkan-ae": "wavkan",
}

CHUNK_ROWS = 4096


def normalize_variant(name: str) -> str:
    try:
        return _VARIANT_ALIASES[name.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None


@dataclass(frozen=True)
class AeArchitecture:
    variant: str
    layer_sizes: tuple
    latent_index: int | None = None
    hidden_activation: str = "relu"
    bspline: BSplineGrid = field(default_factory=BSplineGrid)
    rbf: RbfGrid = field(default_factory=lambda: RbfGrid.uniform(5, -2.0, 2.0))
    fourier: FourierSpec = field(default_factory=FourierSpec)
    lambda_orth: float = 0.0
    lambda_l1: float = 0.0
    lambda_entropy: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        if sizes[0] != sizes[-1]:
            raise ConfigurationError(f"first and last layer sizes differ: {sizes}")
        n_layers = len(sizes) - 1
        latent = n_layers // 2 if self.latent_index is None else int(self.latent_index)
        if not 1 <= latent <= n_layers:
            raise ConfigurationError(f"latent_index {latent} outside 1..{n_layers}")
        object.__setattr__(self, "latent_index", latent)
        if self.hidden_activation not in ("relu", "identity"):
            raise ConfigurationError(f"unknown activation {self.hidden_activation!r}")

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_sizes[self.latent_index]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "layer_sizes": list(self.layer_sizes),
            "latent_index": self.latent_index,
            "hidden_activation": self.hidden_activation,
            "bspline": {
                "grid_size": self.bspline.grid_size,
                "order": self.bspline.order,
                "range_lo": self.bspline.range_lo,
                "range_hi": self.bspline.range_hi,
            },
            "rbf": {"centers": list(self.rbf.centers), "width": self.rbf.width},
            "fourier": {"modes": self.fourier.modes},
            "lambda_orth": self.lambda_orth,
            "lambda_l1": self.lambda_l1,
            "lambda_entropy": self.lambda_entropy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AeArchitecture":
        d = dict(d)
        d["layer_sizes"] = tuple(d["layer_sizes"])
        d["bspline"] = BSplineGrid(**d["bspline"])
        d["rbf"] = RbfGrid(centers=tuple(d["rbf"]["centers"]), width=d["rbf"]["width"])
        d["fourier"] = FourierSpec(**d["fourier"])
        return cls(**d)


def default_architecture(variant: str, n_features: int = 33, latent: int = 25,
                         hidden: int | None = None, **overrides) -> AeArchitecture:
    """Default monitoring architecture for ``variant``.

    With the defaults (33 features, 25 latent) the OAE is ``[33, 85, 25, 85, 33]``
    and every KAN variant is ``[33, 25, 33]``.  ``hidden`` sets the OAE's hidden
    width for other feature counts (default ``85`` at 33 features, else
    ``2 * n_features``).
    """
    variant = normalize_variant(variant)
    if variant == "oae":
        if hidden is None:
            hidden = 85 if n_features == 33 else 2 * n_features
        sizes = (n_features, hidden, latent, hidden, n_features)
    else:
        sizes = (n_features, latent, n_features)
    kwargs = {**_DEFAULT_LAMBDAS.get(variant, {}), **overrides}
    return AeArchitecture(variant=variant, layer_sizes=sizes, **kwargs)


@dataclass
class LossBreakdown:
    mse: float
    orthogonality: float = 0.0
    l1: float = 0.0
    entropy: float = 0.0
    total: float = 0.0


class Model:
    """An autoencoder: an ordered stack of layers split into encoder and decoder at ``latent_index``."""

    def __init__(self, arch: AeArchitecture, layers: list[Layer], seed: int | None = None):
        self.arch = arch
        self.layers = list(layers)
        self.seed = seed

    def __repr__(self):
        return f"Model({self.arch.variant}, sizes={list(self.arch.layer_sizes)}, params={self.count_parameters()})"

    def count_parameters(self) -> int:
        return sum(layer.count_parameters() for layer in self.layers)

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every trainable array, in a fixed order."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield i, name, arr

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def state(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out[f"layers.{i}.{name}"] = arr.copy()
            for name, arr in layer.buffers.items():
                out[f"layers.{i}.buffers.{name}"] = arr.copy()
        return out

    def load_state(self, state: dict) -> None:
        for key, arr in state.items():
            _, i, *rest = key.split(".")
            layer = self.layers[int(i)]
            if rest[0] == "buffers":
                target, name = layer.buffers, rest[1]
            else:
                target, name = layer.params, rest[0]
            if name not in target or target[name].shape != arr.shape:
                raise ContractError(f"state entry {key} does not match the model")
            target[name] = np.array(arr, dtype=float)

    def _run(self, X, training: bool):
        caches = []
        Z = None
        h = X
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h, training=training)
            if not np.isfinite(h).all():
                raise NumericError(f"non-finite activations at output of layer {i} ({layer.kind})")
            caches.append(cache)
            if i + 1 == self.arch.latent_index:
                Z = h
        return h, Z, caches

    def reconstruct(self, X, training: bool = False):
        """Return ``(X_hat, Z)``.  Inference mode evaluates in row chunks."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.arch.n_features:
            raise ContractError(f"expected input with {self.arch.n_features} columns, got {X.shape}")
        if training or X.shape[0] <= CHUNK_ROWS:
            Xh, Z, _ = self._run(X, training)
            return Xh, Z
        parts = [self._run(X[i : i + CHUNK_ROWS], False) for i in range(0, X.shape[0], CHUNK_ROWS)]
        return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])

    def _penalties(self) -> tuple[float, float]:
        l1 = ent = 0.0
        if self.arch.variant == "efficientkan":
            for layer in self.layers:
                a, b = l1_entropy_penalty(layer)
                l1 += a
                ent += b
        return l1, ent

    def loss(self, X, training: bool = False) -> LossBreakdown:
        Xhat, Z = self.reconstruct(X, training=training)
        return self._breakdown(np.asarray(X, dtype=float), Xhat, Z)

    def _breakdown(self, X, Xhat, Z) -> LossBreakdown:
        a = self.arch
        mse = float(((X - Xhat) ** 2).sum(axis=1).mean())
        orth = orthogonality_penalty(Z) if a.variant == "oae" else 0.0
        l1, ent = self._penalties()
        total = mse + a.lambda_orth * orth + a.lambda_l1 * l1 + a.lambda_entropy * ent
        return LossBreakdown(mse=mse, orthogonality=orth, l1=l1, entropy=ent, total=total)

    def loss_and_grads(self, X, training: bool = True):
        """Loss breakdown plus one gradient dict per layer for the total loss.

        Returns ``(breakdown, grads, caches)``; the caches let the caller fold
        batch statistics into normalisation layers.
        """
        X = np.asarray(X, dtype=float)
        Xhat, Z, caches = self._run(X, training)
        br = self._breakdown(X, Xhat, Z)
        a = self.arch
        n = X.shape[0]
        d = 2.0 * (Xhat - X) / n
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            if i + 1 == a.latent_index and a.variant == "oae" and a.lambda_orth:
                d = d + a.lambda_orth * orthogonality_penalty_grad(Z)
            g = self.layers[i].backward(caches[i], d)
            grads[i] = dict(g.params)
            d = g.input
        if a.variant == "efficientkan" and (a.lambda_l1 or a.lambda_entropy):
            for i, layer in enumerate(self.layers):
                g1, ge = l1_entropy_penalty_grad(layer)
                grads[i]["spline_coeffs"] = grads[i]["spline_coeffs"] + a.lambda_l1 * g1 + a.lambda_entropy * ge
        return br, grads, caches


def _make_layer(arch: AeArchitecture, n_in: int, n_out: int, is_last: bool, latent_out: bool, rng):
    v = arch.variant
    if v == "oae":
        act = "identity" if (is_last or latent_out) else arch.hidden_activation
        return DenseLayer(n_in, n_out, activation=act, rng=rng)
    if v == "efficientkan":
        return EfficientKanLayer(n_in, n_out, grid=arch.bspline, rng=rng)
    if v == "fastkan":
        return FastKanLayer(n_in, n_out, grid=arch.rbf, rng=rng)
    if v == "fourierkan":
        return FourierKanLayer(n_in, n_out, spec=arch.fourier, rng=rng)
    return WavKanLayer(n_in, n_out, rng=rng)


def build_model(arch: AeArchitecture, seed: int = 0) -> Model:
    """Allocate and initialise every layer; identical seeds give identical parameters."""
    if not isinstance(arch, AeArchitecture):
        raise ConfigurationError("build_model needs an AeArchitecture")
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    n_layers = len(sizes) - 1
    layers = [
        _make_layer(arch, sizes[i], sizes[i + 1], i == n_layers - 1, i + 1 == arch.latent_index, rng)
        for i in range(n_layers)
    ]
    return Model(arch, layers, seed=seed)


def reconstruct(model: Model, X):
    return model.reconstruct(X)


def loss(model: Model, X, training: bool = False) -> LossBreakdown:
    return model.loss(X, training=training)


def count_parameters(model: Model | None) -> int:
    if model is None:
        return 0
    return model.count_parameters()


# ---------------------------------------------------------------- file format
#
#   offset  size  content
#   0       8     magic b"KANAEMDL"
#   8       2     format version, uint16 LE
#   10      4     header length H, uint32 LE
#   14      H     UTF-8 JSON header (architecture, seed, array table, metadata)
#   14+H    8*P   float64 LE payload, arrays concatenated in header order
#   end-4   4     CRC-32 of header + payload, uint32 LE

MAGIC = b"KANAEMDL"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")


def save_model(model: Model, path, extras: dict | None = None, metadata: dict | None = None) -> Path:
    """Write ``model`` (plus optional named float arrays and JSON metadata) to ``path``."""
    path = Path(path)
    arrays = model.state()
    for name, arr in (extras or {}).items():
        arrays[f"extra.{name}"] = np.asarray(arr, dtype=float)
    table = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    header = json.dumps(
        {
            "architecture": model.arch.to_dict(),
            "seed": model.seed,
            "arrays": table,
            "metadata": metadata or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    crc = zlib.crc32(header + payload)
    buf = io.BytesIO()
    buf.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
    buf.write(header)
    buf.write(payload)
    buf.write(struct.pack("<I", crc))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def load_container(path):
    """Read a model file; returns ``(model, extras, metadata)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size + 4:
        raise ModelFileError(f"{path}: file too short to be a model container")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: bad magic bytes")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version}")
    body = raw[_PREFIX.size : -4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if len(body) < hlen or zlib.crc32(body) != crc:
        raise ModelFileError(f"{path}: checksum mismatch (corrupt or truncated file)")
    try:
        header = json.loads(body[:hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: unreadable header") from exc
    payload = np.frombuffer(body[hlen:], dtype="<f8")
    arrays = {}
    pos = 0
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"], dtype=int))
        if pos + size > payload.size:
            raise ModelFileError(f"{path}: payload shorter than declared")
        arrays[entry["name"]] = payload[pos : pos + size].reshape(entry["shape"]).astype(float)
        pos += size
    if pos != payload.size:
        raise ModelFileError(f"{path}: payload longer than declared")
    arch = AeArchitecture.from_dict(header["architecture"])
    model = build_model(arch, seed=header["seed"] if header["seed"] is not None else 0)
    model.seed = header["seed"]
    model.load_state({k: v for k, v in arrays.items() if k.startswith("layers.")})
    extras = {k[len("extra.") :]: v for k, v in arrays.items() if k.startswith("extra.")}
    return model, extras, header.get("metadata", {})


def load_model(path) -> Model:
    return load_container(path)[0]


def with_lambdas(arch: AeArchitecture, **lambdas) -> AeArchitecture:
    """Copy of ``arch`` with some regularisation strengths replaced."""
    return replace(arch, **{k: float(v) for k, v in lambdas.items() if v is not None})
