"""Univariate basis families used on KAN edges.

Every evaluator accepts a scalar or an array ``x`` of any shape and returns an
array with one extra trailing axis holding the basis values.  Derivatives are
with respect to the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "BSplineGrid",
    "RbfGrid",
    "FourierSpec",
    "bspline_basis",
    "bspline_basis_dx",
    "rbf_basis",
    "rbf_basis_dx",
    "fourier_features",
    "fourier_features_dx",
    "dog_wavelet",
    "silu",
    "silu_dx",
]


@dataclass(frozen=True)
class BSplineGrid:
    """Uniform knot vector on ``[range_lo, range_hi]`` extended by ``order`` knots each side.

    ``order`` is the polynomial degree of the pieces (3 = cubic), so the grid
    carries ``grid_size + order`` basis functions.
    """

    grid_size: int = 3
    order: int = 3
    range_lo: float = -1.0
    range_hi: float = 1.0
    knots: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if int(self.grid_size) < 1 or int(self.order) < 1:
            raise ConfigurationError(
                f"grid_size and order must be positive, got {self.grid_size}, {self.order}"
            )
        if not self.range_lo < self.range_hi:
            raise ConfigurationError(
                f"range_lo must be below range_hi, got [{self.range_lo}, {self.range_hi}]"
            )
        if self.knots is None:
            step = (self.range_hi - self.range_lo) / self.grid_size
            idx = np.arange(-self.order, self.grid_size + self.order + 1, dtype=float)
            knots = self.range_lo + idx * step
        else:
            knots = np.asarray(self.knots, dtype=float)
            expected = self.grid_size + 2 * self.order + 1
            if knots.shape != (expected,):
                raise ConfigurationError(f"expected {expected} knots, got shape {knots.shape}")
            if np.any(np.diff(knots) <= 0):
                raise ConfigurationError("knot sequence must be strictly increasing")
        knots = knots.copy()
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    @property
    def spacing(self) -> float:
        return (self.range_hi - self.range_lo) / self.grid_size


@dataclass(frozen=True)
class RbfGrid:
    """Gaussian centres and common width.  Default: 5 centres on [-2, 2], width 1."""

    centers: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    width: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ConfigurationError("centers must be a non-empty 1-D sequence")
        if np.any(np.diff(c) <= 0):
            raise ConfigurationError("centers must be strictly increasing")
        if not self.width > 0:
            raise ConfigurationError(f"width must be positive, got {self.width}")
        object.__setattr__(self, "centers", tuple(float(v) for v in c))

    @classmethod
    def uniform(cls, n_centers: int = 5, lo: float = -2.0, hi: float = 2.0) -> "RbfGrid":
        """Equally spaced centres with width equal to the centre spacing."""
        if n_centers < 2:
            raise ConfigurationError("uniform grid needs at least two centres")
        centers = np.linspace(lo, hi, n_centers)
        return cls(centers=tuple(centers), width=float(centers[1] - centers[0]))

    @property
    def n_basis(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class FourierSpec:
    modes: int = 3

    def __post_init__(self):
        if int(self.modes) < 1:
            raise ConfigurationError(f"modes must be >= 1, got {self.modes}")

    @property
    def n_basis(self) -> int:
        return 2 * self.modes


def _check_knots(grid: BSplineGrid) -> np.ndarray:
    t = grid.knots
    if np.any(np.diff(t) < 0):
        raise ConfigurationError("knot sequence is not monotone")
    return t


def _cox_de_boor(x: np.ndarray, t: np.ndarray, degree: int) -> list[np.ndarray]:
    """Return basis tables for degrees 0..degree; table p has len(t) - 1 - p columns."""
    x = x[..., None]
    tables = [((x >= t[:-1]) & (x < t[1:])).astype(float)]
    for p in range(1, degree + 1):
        prev = tables[-1]
        left = (x - t[: -p - 1]) / (t[p:-1] - t[: -p - 1])
        right = (t[p + 1 :] - x) / (t[p + 1 :] - t[1:-p])
        tables.append(left * prev[..., :-1] + right * prev[..., 1:])
    return tables


def bspline_basis(x, grid: BSplineGrid) -> np.ndarray:
    """B-spline basis values ``B_k(x)``, shape ``x.shape + (grid_size + order,)``."""
    t = _check_knots(grid)
    return _cox_de_boor(np.asarray(x, dtype=float), t, grid.order)[-1]


def bspline_basis_dx(x, grid: BSplineGrid) -> np.ndarray:
    """Input derivative of :func:`bspline_basis` via the degree-lowering recurrence."""
    t = _check_knots(grid)
    p = grid.order
    lower = _cox_de_boor(np.asarray(x, dtype=float), t, p - 1)[-1]
    a = p / (t[p:-1] - t[: -p - 1])
    b = p / (t[p + 1 :] - t[1:-p])
    return a * lower[..., :-1] - b * lower[..., 1:]


def _bspline_with_dx(x: np.ndarray, grid: BSplineGrid) -> tuple[np.ndarray, np.ndarray]:
    t = _check_knots(grid)
    p = grid.order
    tables = _cox_de_boor(x, t, p)
    lower = tables[-2]
    a = p / (t[p:-1] - t[: -p - 1])
    b = p / (t[p + 1 :] - t[1:-p])
    return tables[-1], a * lower[..., :-1] - b * lower[..., 1:]


def rbf_basis(x, grid: RbfGrid) -> np.ndarray:
    """Gaussian bumps ``exp(-((x - mu_k) / sigma)^2)``."""
    if not grid.width > 0:
        raise ConfigurationError("RBF width must be positive")
    u = (np.asarray(x, dtype=float)[..., None] - np.asarray(grid.centers)) / grid.width
    return np.exp(-(u**2))


def rbf_basis_dx(x, grid: RbfGrid) -> np.ndarray:
    u = (np.asarray(x, dtype=float)[..., None] - np.asarray(grid.centers)) / grid.width
    return -2.0 * u / grid.width * np.exp(-(u**2))


def fourier_features(x, spec: FourierSpec) -> np.ndarray:
    """``[cos(1x)..cos(gx), sin(1x)..sin(gx)]`` along the last axis."""
    k = np.arange(1, spec.modes + 1, dtype=float)
    kx = np.asarray(x, dtype=float)[..., None] * k
    return np.concatenate([np.cos(kx), np.sin(kx)], axis=-1)


def fourier_features_dx(x, spec: FourierSpec) -> np.ndarray:
    k = np.arange(1, spec.modes + 1, dtype=float)
    kx = np.asarray(x, dtype=float)[..., None] * k
    return np.concatenate([-k * np.sin(kx), k * np.cos(kx)], axis=-1)


def dog_wavelet(x):
    """Derivative-of-Gaussian mother wavelet and its slope.

    psi(x) = -x exp(-x^2 / 2),  psi'(x) = (x^2 - 1) exp(-x^2 / 2)
    """
    x = np.asarray(x, dtype=float)
    g = np.exp(-0.5 * x * x)
    return -x * g, (x * x - 1.0) * g


def silu(x):
    x = np.asarray(x, dtype=float)
    return x * _sigmoid(x)


def silu_dx(x):
    x = np.asarray(x, dtype=float)
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
