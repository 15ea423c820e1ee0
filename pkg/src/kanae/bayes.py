"""Bayesian signed-rank comparison of two detectors across faults.

A Dirichlet-process posterior with a pseudo-observation at zero is placed on
the per-fault FDR differences ``B - A``.  Each Monte Carlo draw gives the
probability that the sum of two draws from the posterior falls left of, inside,
or right of the region of practical equivalence ``[-2r, 2r]``; the summary
reports how often each region dominates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

__all__ = [
    "CHALLENGE_FAULTS",
    "DeltaSample",
    "RopeConfig",
    "PosteriorSummary",
    "fdr_deltas",
    "signed_rank_posterior",
    "region_masses",
    "posterior_sweep",
    "write_posterior_table",
    "read_posterior_table",
    "POSTERIOR_COLUMNS",
]

# faults left after dropping the controllable ones and those PCA already detects above 95%
CHALLENGE_FAULTS = (5, 10, 11, 16, 17, 18, 19, 20, 21)


@dataclass
class DeltaSample:
    deltas: np.ndarray
    faults: tuple

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float).ravel()
        self.faults = tuple(int(f) for f in self.faults)
        if self.deltas.size < 1:
            raise DataError("need at least one fault difference")
        if self.deltas.size != len(self.faults):
            raise DataError("one fault id per difference is required")

    def __neg__(self):
        return DeltaSample(-self.deltas, self.faults)


@dataclass(frozen=True)
class RopeConfig:
    rope_radius: float = 0.01
    concentration: float = 1.0
    mc_draws: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if self.rope_radius < 0:
            raise ConfigurationError("rope_radius must be non-negative")
        if not self.concentration > 0:
            raise ConfigurationError("concentration must be positive")
        if self.mc_draws < 1000:
            raise ConfigurationError("mc_draws must be at least 1000")


@dataclass(frozen=True)
class PosteriorSummary:
    p_left: float
    p_rope: float
    p_right: float

    def as_tuple(self):
        return (self.p_left, self.p_rope, self.p_right)


def fdr_deltas(report_a, report_b, faults=CHALLENGE_FAULTS) -> DeltaSample:
    """Per-fault difference of seed-mean FDR, B minus A."""
    deltas = []
    for f in faults:
        try:
            a, b = report_a[f], report_b[f]
        except KeyError:
            raise DataError(f"fault {f} missing from a detection report") from None
        if a.n_seeds != b.n_seeds:
            raise DataError(f"fault {f}: seed counts differ ({a.n_seeds} vs {b.n_seeds})")
        if a.fdr_mean is None or b.fdr_mean is None:
            raise DataError(f"fault {f}: FDR undefined")
        deltas.append(b.fdr_mean - a.fdr_mean)
    return DeltaSample(np.array(deltas), tuple(faults))


def _region_matrices(z: np.ndarray, r: float):
    s = z[:, None] + z[None, :]
    return (s < -2 * r).astype(float), (np.abs(s) <= 2 * r).astype(float), (s > 2 * r).astype(float)


def region_masses(weights: np.ndarray, z, rope_radius: float) -> np.ndarray:
    """``(theta_l, theta_e, theta_r)`` for each row of Dirichlet weights over ``z``."""
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    out = np.empty((W.shape[0], 3))
    for k, M in enumerate(_region_matrices(np.asarray(z, dtype=float), rope_radius)):
        out[:, k] = ((W @ M) * W).sum(axis=1)
    return out


def _dirichlet_weights(q: int, cfg: RopeConfig, n: int, rng) -> np.ndarray:
    alpha = np.concatenate([[cfg.concentration], np.ones(q)])
    return rng.dirichlet(alpha, size=n)


def signed_rank_posterior(sample: DeltaSample, cfg: RopeConfig = RopeConfig()) -> PosteriorSummary:
    """Fractions of posterior draws in which left, ROPE or right carries the most mass.

    A draw whose maximum is shared is credited to the ROPE, so the three
    probabilities always sum to one.
    """
    z = np.concatenate([[0.0], sample.deltas])
    rng = np.random.default_rng(cfg.seed)
    counts = np.zeros(3, dtype=np.int64)
    chunk = 10_000
    for start in range(0, cfg.mc_draws, chunk):
        W = _dirichlet_weights(sample.deltas.size, cfg, min(chunk, cfg.mc_draws - start), rng)
        th = region_masses(W, z, cfg.rope_radius)
        left = (th[:, 0] > th[:, 1]) & (th[:, 0] > th[:, 2])
        right = (th[:, 2] > th[:, 1]) & (th[:, 2] > th[:, 0])
        counts[0] += left.sum()
        counts[2] += right.sum()
        counts[1] += (~left & ~right).sum()
    p = counts / cfg.mc_draws
    return PosteriorSummary(float(p[0]), float(p[1]), float(p[2]))


def posterior_sweep(reports_a: dict, reports_b: dict, cfg: RopeConfig = RopeConfig(),
                    faults=CHALLENGE_FAULTS, pair: str = "A:B") -> list[dict]:
    """One posterior triplet per training size.

    ``reports_a`` / ``reports_b`` map ``n_train`` to a
    :class:`~kanae.detect.DetectionReport`.  Sizes present on only one side, or
    lacking a challenge fault, appear with ``None`` probabilities.
    """
    rows = []
    for n in sorted(set(reports_a) | set(reports_b)):
        row = {"pair": pair, "n_train": int(n), "p_left": None, "p_rope": None, "p_right": None}
        if n in reports_a and n in reports_b:
            try:
                s = signed_rank_posterior(fdr_deltas(reports_a[n], reports_b[n], faults), cfg)
            except DataError:
                pass
            else:
                row.update(p_left=s.p_left, p_rope=s.p_rope, p_right=s.p_right)
        rows.append(row)
    return rows


POSTERIOR_COLUMNS = ("pair", "n_train", "p_left", "p_rope", "p_right")


def write_posterior_table(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=POSTERIOR_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                        for k in POSTERIOR_COLUMNS})
    return path


def read_posterior_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "pair": r["pair"],
                "n_train": int(r["n_train"]),
                **{k: (float(r[k]) if r[k] else None) for k in ("p_left", "p_rope", "p_right")},
            }
            for r in csv.DictReader(fh)
        ]
