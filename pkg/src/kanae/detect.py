"""SPE monitoring: KDE control limits, alarm counting and FDR/FAR aggregation."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import ContractError, DataError, DegenerateDistributionError
from .model import Model, load_container, save_model
from .train import Scaler

__all__ = [
    "spe",
    "scott_bandwidth",
    "KdeModel",
    "Threshold",
    "kde_threshold",
    "ConfusionCounts",
    "evaluate_run",
    "rates",
    "FaultSummary",
    "DetectionReport",
    "aggregate",
    "fault_category",
    "CATEGORIES",
    "MonitoringProfile",
    "fit_profile",
    "save_profile",
    "load_profile",
    "evaluate_profile",
    "REPORT_COLUMNS",
    "write_report_rows",
    "read_report_rows",
]

CATEGORIES = {
    "controllable": (3, 9, 15),
    "back_to_control": (4, 5, 7),
    "uncontrollable": (1, 2, 6, 8, 10, 11, 12, 13, 14, 16, 17, 18, 19, 20, 21),
}
_CATEGORY_OF = {f: name for name, faults in CATEGORIES.items() for f in faults}


def fault_category(fault_id: int) -> str | None:
    return _CATEGORY_OF.get(int(fault_id))


def spe(x, x_hat) -> np.ndarray | float:
    """Squared prediction error ``||x - x_hat||^2``; row-wise for 2-D input."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    r = ((x - x_hat) ** 2).sum(axis=-1)
    return float(r) if r.ndim == 0 else r


def scott_bandwidth(samples) -> float:
    q = np.asarray(samples, dtype=float)
    return float(q.std(ddof=1) * q.size ** (-0.2))


@dataclass
class KdeModel:
    """Gaussian kernel density over observed SPE values."""

    samples: np.ndarray
    bandwidth: float

    @classmethod
    def fit(cls, samples) -> "KdeModel":
        q = np.asarray(samples, dtype=float).ravel()
        if q.size < 2:
            raise DataError("KDE needs at least two samples")
        if not np.isfinite(q).all():
            raise DataError("KDE samples must be finite")
        h = scott_bandwidth(q)
        # rounding can leave a tiny nonzero std for constant input, so test the range
        if q.max() == q.min() or not h > 0:
            raise DegenerateDistributionError(
                "all SPE values are identical (zero spread); the model reconstructs every "
                "training sample equally and no control limit can be estimated. Check for "
                "a collapsed model or constant input data."
            )
        return cls(samples=q, bandwidth=h)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = (x[:, None] - self.samples) / self.bandwidth
        return np.exp(-0.5 * u * u).sum(axis=1) / (self.samples.size * self.bandwidth * math.sqrt(2 * math.pi))

    def cdf(self, x) -> np.ndarray | float:
        """Closed form: the mean of normal CDFs centred on the samples."""
        xs = np.asarray(x, dtype=float)
        flat = np.atleast_1d(xs)
        out = np.array([ndtr((v - self.samples) / self.bandwidth).mean() for v in flat])
        return float(out[0]) if xs.ndim == 0 else out.reshape(xs.shape)

    def quantile(self, p: float, tol: float = 1e-10) -> float:
        """Smallest ``x`` with ``cdf(x) >= p``, by bisection to ``tol``."""
        if not 0 < p < 1:
            raise ContractError(f"quantile level must lie in (0, 1), got {p}")
        h = self.bandwidth
        lo = float(self.samples.min()) - 40 * h
        hi = float(self.samples.max()) + 40 * h
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi) or hi - lo <= tol:
                break
            if self.cdf(mid) >= p:
                hi = mid
            else:
                lo = mid
        return hi


@dataclass
class Threshold:
    q_lim: float
    alpha: float = 0.05
    bandwidth: float | None = None


def kde_threshold(q_train, alpha: float = 0.05) -> Threshold:
    """Control limit at the ``1 - alpha`` quantile of the KDE-smoothed SPE distribution."""
    kde = KdeModel.fit(q_train)
    return Threshold(q_lim=kde.quantile(1.0 - alpha), alpha=alpha, bandwidth=kde.bandwidth)


# ---------------------------------------------------------------- counting

@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def evaluate_run(q_seq, q_lim: float, fault_onset: int) -> ConfusionCounts:
    """Count alarms (``Q > q_lim``) before and from ``fault_onset``."""
    q = np.asarray(q_seq, dtype=float)
    onset = int(fault_onset)
    if not 0 <= onset <= q.size:
        raise ContractError(f"fault onset {onset} outside 0..{q.size}")
    alarm = q > q_lim
    pre, post = alarm[:onset], alarm[onset:]
    fp = int(pre.sum())
    tp = int(post.sum())
    return ConfusionCounts(tp=tp, fp=fp, fn=post.size - tp, tn=pre.size - fp)


def rates(counts: ConfusionCounts) -> tuple[float | None, float | None]:
    """``(FDR, FAR)``; a rate with an empty denominator is ``None``."""
    pos = counts.tp + counts.fn
    neg = counts.fp + counts.tn
    fdr = counts.tp / pos if pos else None
    far = counts.fp / neg if neg else None
    return fdr, far


# ---------------------------------------------------------------- aggregation

def _mean_ci(values) -> tuple[float | None, float | None]:
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None
    if v.size < 2:
        return float(v.mean()), None
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class FaultSummary:
    fault: int
    category: str | None
    fdr_mean: float | None
    fdr_ci: float | None
    far_mean: float | None
    far_ci: float | None
    fdr_by_seed: dict = field(default_factory=dict)
    far_by_seed: dict = field(default_factory=dict)

    @property
    def n_seeds(self) -> int:
        return len(self.fdr_by_seed)


@dataclass
class DetectionReport:
    faults: dict

    def __getitem__(self, fault):
        return self.faults[int(fault)]

    @property
    def seeds(self) -> list:
        return sorted({s for f in self.faults.values() for s in f.fdr_by_seed})

    def category_means(self) -> dict:
        """Per category: mean FDR over its faults for each seed, then mean and CI over seeds."""
        out = {}
        for name in CATEGORIES:
            members = [f for f in self.faults.values() if f.category == name]
            if not members:
                continue
            per_seed = []
            for seed in self.seeds:
                vals = [f.fdr_by_seed.get(seed) for f in members]
                vals = [v for v in vals if v is not None]
                if vals:
                    per_seed.append(float(np.mean(vals)))
            mean, ci = _mean_ci(per_seed)
            out[name] = {"fdr_mean": mean, "fdr_ci": ci, "n_faults": len(members)}
        return out


def aggregate(rows) -> DetectionReport:
    """Build a report from per-run rows ``(fault, seed, fdr, far)`` (tuples or dicts).

    Rows for the same fault and seed are averaged first; seeds are then
    combined into a mean and a ``1.96 * sd / sqrt(n_seeds)`` half-width.
    """
    grouped = defaultdict(lambda: defaultdict(lambda: ([], [])))
    for row in rows:
        if isinstance(row, dict):
            fault, seed, fdr, far = row["fault"], row["seed"], row["fdr"], row["far"]
        else:
            fault, seed, fdr, far = row
        fdrs, fars = grouped[int(fault)][seed]
        if fdr is not None:
            fdrs.append(float(fdr))
        if far is not None:
            fars.append(float(far))
    if not grouped:
        raise DataError("no rows to aggregate")
    faults = {}
    for fault in sorted(grouped):
        by_seed = grouped[fault]
        fdr_by = {s: (float(np.mean(v[0])) if v[0] else None) for s, v in sorted(by_seed.items())}
        far_by = {s: (float(np.mean(v[1])) if v[1] else None) for s, v in sorted(by_seed.items())}
        fm, fc = _mean_ci(fdr_by.values())
        am, ac = _mean_ci(far_by.values())
        faults[fault] = FaultSummary(fault, fault_category(fault), fm, fc, am, ac, fdr_by, far_by)
    return DetectionReport(faults)


# ---------------------------------------------------------------- profiles

@dataclass
class MonitoringProfile:
    """A deployable detector: scaler, trained model, training SPE values and the control limit."""

    model: Model
    scaler: Scaler
    q_train: np.ndarray
    threshold: Threshold

    def scaled(self, rows) -> np.ndarray:
        return self.scaler.transform(rows)

    def score(self, rows) -> np.ndarray:
        """SPE of raw (unscaled) rows."""
        X = self.scaler.transform(rows)
        Xhat, _ = self.model.reconstruct(X)
        return spe(X, Xhat)

    def with_alpha(self, alpha: float) -> "MonitoringProfile":
        if alpha == self.threshold.alpha:
            return self
        return MonitoringProfile(self.model, self.scaler, self.q_train, kde_threshold(self.q_train, alpha))


def fit_profile(model: Model, scaler: Scaler, train_scaled, alpha: float = 0.05) -> MonitoringProfile:
    """Threshold ``model`` on the SPE of the (already scaled) training partition."""
    X = np.asarray(train_scaled, dtype=float)
    Xhat, _ = model.reconstruct(X)
    q = spe(X, Xhat)
    return MonitoringProfile(model, scaler, q, kde_threshold(q, alpha))


def save_profile(profile: MonitoringProfile, path) -> Path:
    return save_model(
        profile.model,
        path,
        extras={"scaler_mean": profile.scaler.mean, "scaler_std": profile.scaler.std, "q_train": profile.q_train},
        metadata={"q_lim": profile.threshold.q_lim, "alpha": profile.threshold.alpha,
                  "bandwidth": profile.threshold.bandwidth},
    )


def load_profile(path) -> MonitoringProfile:
    model, extras, meta = load_container(path)
    try:
        scaler = Scaler(mean=extras["scaler_mean"], std=extras["scaler_std"])
        q = extras["q_train"]
        thr = Threshold(q_lim=meta["q_lim"], alpha=meta["alpha"], bandwidth=meta.get("bandwidth"))
    except KeyError as exc:
        raise DataError(f"{path}: model file carries no monitoring profile ({exc})") from None
    return MonitoringProfile(model, scaler, q, thr)


def evaluate_profile(profile: MonitoringProfile, runs, alpha: float | None = None) -> dict:
    """Pooled confusion counts per fault id over ``runs`` (objects with ``fault_id``,
    ``samples`` and ``fault_onset``)."""
    if alpha is not None:
        profile = profile.with_alpha(alpha)
    q_lim = profile.threshold.q_lim
    out: dict[int, ConfusionCounts] = {}
    for run in runs:
        onset = run.fault_onset if run.fault_onset is not None else len(run.samples)
        c = evaluate_run(profile.score(run.samples), q_lim, onset)
        out[run.fault_id] = out.get(run.fault_id, ConfusionCounts()) + c
    return dict(sorted(out.items()))


# ---------------------------------------------------------------- report files

REPORT_COLUMNS = ("variant", "size", "seed", "fault", "fdr", "far", "tp", "fp", "fn", "tn")


def write_report_rows(path, rows) -> Path:
    """Write report rows (dicts keyed by :data:`REPORT_COLUMNS`); absent rates are empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                        for k in REPORT_COLUMNS})
    return path


def read_report_rows(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append({
                "variant": r["variant"],
                "size": int(r["size"]),
                "seed": int(r["seed"]),
                "fault": int(r["fault"]),
                "fdr": float(r["fdr"]) if r["fdr"] else None,
                "far": float(r["far"]) if r["far"] else None,
                **{k: int(r[k]) for k in ("tp", "fp", "fn", "tn")},
            })
    return out


def report_rows(variant: str, size: int, seed: int, counts: dict) -> list[dict]:
    rows = []
    for fault, c in counts.items():
        fdr, far = rates(c)
        rows.append({"variant": variant, "size": int(size), "seed": int(seed), "fault": int(fault),
                     "fdr": fdr, "far": far, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn})
    return rows
