"""Scaling, simulation-level splitting, AdamW training and multi-seed sweeps."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, KanaeError, NumericError, TrainingError
from .model import AeArchitecture, Model, build_model, normalize_variant
from .layers import WavKanLayer

logger = logging.getLogger(__name__)

__all__ = [
    "Scaler",
    "fit_scaler",
    "apply_scaler",
    "split_simulations",
    "optimizer_step",
    "TrainConfig",
    "TrainHistory",
    "train",
    "SweepCell",
    "sweep",
    "cell_name",
]

STD_FLOOR = 1e-8

# initial learning rate, decoupled weight decay, plateau factor
_TUNED = {
    "oae": (1.00e-3, 1.00e-2, 0.20),
    "efficientkan": (4.38e-3, 2.00e-2, 0.96),
    "fastkan": (1.92e-3, 9.60e-3, 0.93),
    "fourierkan": (3.63e-3, 5.38e-3, 0.98),
    "wavkan": (4.99e-3, 7.60e-3, 0.95),
}


# ---------------------------------------------------------------- scaling

@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, rows) -> np.ndarray:
        return (np.asarray(rows, dtype=float) - self.mean) / self.std

    def inverse_transform(self, rows) -> np.ndarray:
        return np.asarray(rows, dtype=float) * self.std + self.mean


def fit_scaler(rows) -> Scaler:
    """Per-feature z-score statistics; constant features get ``std = 1e-8``."""
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError(f"need at least two rows to fit a scaler, got shape {X.shape}")
    return Scaler(mean=X.mean(axis=0), std=np.maximum(X.std(axis=0), STD_FLOOR))


def apply_scaler(scaler: Scaler, rows) -> np.ndarray:
    return scaler.transform(rows)


# ---------------------------------------------------------------- splitting

def _samples(run) -> np.ndarray:
    return np.asarray(getattr(run, "samples", run), dtype=float)


def split_simulations(runs, target_samples: int, fraction: float = 0.8, seed: int = 0):
    """Assign whole runs, in random order, to training then validation.

    The last run taken by each partition is cut to hit its quota exactly;
    its leftover rows are not reused.  Returns ``(train_rows, val_rows)``.
    """
    target_samples = int(target_samples)
    n_train = int(math.floor(fraction * target_samples + 0.5))
    quotas = [n_train, target_samples - n_train]
    order = np.random.default_rng(seed).permutation(len(runs))
    parts: list[list[np.ndarray]] = [[], []]
    k = 0
    for part, quota in enumerate(quotas):
        have = 0
        while have < quota:
            if k >= len(order):
                raise DataError(
                    f"insufficient data: {target_samples} samples requested from {len(runs)} runs"
                )
            rows = _samples(runs[order[k]])
            k += 1
            take = rows[: quota - have]
            parts[part].append(take)
            have += take.shape[0]
    width = _samples(runs[0]).shape[1]
    out = tuple(np.vstack(p) if p else np.empty((0, width)) for p in parts)
    return out[0], out[1]


# ---------------------------------------------------------------- optimiser

def optimizer_step(params, grads, state, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
    """One AdamW update, in place.

    ``state`` is ``None`` on the first call; the returned state must be passed
    back on the next.  Decay shrinks each weight by ``lr * weight_decay * w``
    before the adaptive step and never enters the moment estimates.
    """
    if state is None:
        state = {"step": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    initial_lr: float = 1e-3
    weight_decay: float = 1e-2
    scheduler_factor: float = 0.2
    scheduler_patience: int = 5
    early_stop_patience: int = 15
    batch_size: int = 256
    max_epochs: int = 600
    seed: int = 0
    improvement_threshold: float = 1e-4
    lambda_orth: float | None = None
    lambda_l1: float | None = None
    lambda_entropy: float | None = None

    def __post_init__(self):
        if self.initial_lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning rate and weight decay must be non-negative")
        if not 0 < self.scheduler_factor < 1:
            raise ConfigurationError(f"scheduler_factor must lie in (0, 1), got {self.scheduler_factor}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be positive")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "TrainConfig":
        lr, wd, factor = _TUNED[normalize_variant(variant)]
        return cls(initial_lr=lr, weight_decay=wd, scheduler_factor=factor, **overrides)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: int = 0

    @property
    def n_epochs(self) -> int:
        return len(self.val_loss)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "TrainHistory":
        return cls(**json.loads(text))


def train(model: Model, train_rows, val_rows, cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Fit a copy of ``model`` on scaled rows; return the best-validation snapshot.

    Validation loss is plain reconstruction MSE.  An epoch counts as an
    improvement when it beats the best loss so far by a relative
    ``improvement_threshold``.
    """
    model = model.copy()
    lambdas = {k: getattr(cfg, k) for k in ("lambda_orth", "lambda_l1", "lambda_entropy")}
    lambdas = {k: float(v) for k, v in lambdas.items() if v is not None}
    if lambdas:
        model.arch = replace(model.arch, **lambdas)
    Xt = np.asarray(train_rows, dtype=float)
    Xv = np.asarray(val_rows, dtype=float)
    if Xt.shape[0] < 1 or Xv.shape[0] < 1:
        raise DataError("training and validation partitions must be non-empty")

    rng = np.random.default_rng([cfg.seed, 1])
    keys = [(i, name) for i, name, _ in model.parameters()]
    state = None
    lr = cfg.initial_lr
    hist = TrainHistory()
    best_snapshot, best_snapshot_loss = model.state(), math.inf
    best = math.inf
    bad = sched_bad = 0
    norm_layers = [i for i, layer in enumerate(model.layers) if isinstance(layer, WavKanLayer)]
    n = Xt.shape[0]

    # overflow is caught below as a non-finite loss or gradient
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.max_epochs + 1):
            perm = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                Xb = Xt[perm[start : start + cfg.batch_size]]
                try:
                    br, grads, caches = model.loss_and_grads(Xb, training=True)
                except NumericError as exc:
                    raise TrainingError(f"divergence in epoch {epoch}: {exc}", epoch=epoch) from exc
                if not math.isfinite(br.total):
                    raise TrainingError(f"non-finite training loss in epoch {epoch}", epoch=epoch)
                for i in norm_layers:
                    model.layers[i].update_running_stats(caches[i])
                params = [model.layers[i].params[name] for i, name in keys]
                flat = [grads[i][name] for i, name in keys]
                try:
                    _, state = optimizer_step(params, flat, state, lr, cfg.weight_decay)
                except NumericError as exc:
                    raise TrainingError(f"divergence in epoch {epoch}: {exc}", epoch=epoch) from exc
                total += br.total * Xb.shape[0]
            try:
                val = model.loss(Xv).mse
            except NumericError as exc:
                raise TrainingError(f"divergence in epoch {epoch}: {exc}", epoch=epoch) from exc
            if not math.isfinite(val):
                raise TrainingError(f"non-finite validation loss in epoch {epoch}", epoch=epoch)
            hist.train_loss.append(total / n)
            hist.val_loss.append(val)
            hist.lr.append(lr)

            if val < best_snapshot_loss:
                best_snapshot, best_snapshot_loss = model.state(), val
                hist.best_epoch = epoch
            if val < best * (1.0 - cfg.improvement_threshold):
                best = val
                bad = sched_bad = 0
            else:
                bad += 1
                sched_bad += 1
            if bad >= cfg.early_stop_patience:
                hist.stop_reason = "early_stop"
                break
            if sched_bad >= cfg.scheduler_patience:
                lr *= cfg.scheduler_factor
                sched_bad = 0

    model.load_state(best_snapshot)
    return model, hist


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepCell:
    variant: str
    size: int
    seed: int
    path: Path | None = None
    profile: object = None
    history: TrainHistory | None = None
    error: str | None = None
    resumed: bool = False


def cell_name(variant: str, size: int, seed: int) -> str:
    return f"{normalize_variant(variant)}_n{int(size)}_s{int(seed):03d}"


def train_cell(arch: AeArchitecture, train_rows, val_rows, seed: int, cfg: TrainConfig | None = None,
               alpha: float = 0.05):
    """Scale, train and threshold one (subset, seed) cell; returns ``(profile, history)``."""
    from .detect import fit_profile

    cfg = replace(cfg or TrainConfig.for_variant(arch.variant), seed=seed)
    scaler = fit_scaler(train_rows)
    Xt = scaler.transform(train_rows)
    Xv = scaler.transform(val_rows)
    model = build_model(arch, seed=seed)
    model, hist = train(model, Xt, Xv, cfg)
    profile = fit_profile(model, scaler, Xt, alpha=alpha)
    return profile, hist


def _run_cell(args):
    arch, size, seed, train_rows, val_rows, cfg, alpha, out_dir = args
    from .detect import save_profile

    cell = SweepCell(arch.variant, size, seed)
    try:
        profile, hist = train_cell(arch, train_rows, val_rows, seed, cfg, alpha)
    except KanaeError as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
        logger.warning("cell %s failed: %s", cell_name(arch.variant, size, seed), cell.error)
        return cell
    cell.profile, cell.history = profile, hist
    if out_dir is not None:
        stem = Path(out_dir) / cell_name(arch.variant, size, seed)
        Path(str(stem) + ".history.json").write_text(hist.to_json())
        cell.path = save_profile(profile, str(stem) + ".kae")
    return cell


def sweep(arch: AeArchitecture, datasets: dict, n_seeds=30, cfg: TrainConfig | None = None,
          alpha: float = 0.05, out_dir=None, jobs: int = 1) -> list[SweepCell]:
    """Train one profile per (subset size, seed).

    ``datasets`` maps subset size to ``(train_rows, val_rows)`` in raw units.
    ``n_seeds`` is a count (seeds ``0..n-1``) or an explicit seed list.  With
    ``out_dir`` set, cells whose model file already exists are loaded instead of
    retrained.  A failing cell is reported in its ``error`` field and the sweep
    carries on.
    """
    from .detect import load_profile

    seeds = list(range(n_seeds)) if isinstance(n_seeds, int) else [int(s) for s in n_seeds]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    results: dict[tuple, SweepCell] = {}
    todo = []
    for size in sorted(datasets):
        for seed in seeds:
            if out_dir is not None:
                stem = Path(out_dir) / cell_name(arch.variant, size, seed)
                model_path = Path(str(stem) + ".kae")
                if model_path.exists():
                    hist_path = Path(str(stem) + ".history.json")
                    hist = TrainHistory.from_json(hist_path.read_text()) if hist_path.exists() else None
                    results[(size, seed)] = SweepCell(
                        arch.variant, size, seed, path=model_path,
                        profile=load_profile(model_path), history=hist, resumed=True,
                    )
                    continue
            tr, va = datasets[size]
            todo.append((arch, size, seed, tr, va, cfg, alpha, out_dir))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_cell, todo))
    else:
        done = [_run_cell(t) for t in todo]
    for cell in done:
        results[(cell.size, cell.seed)] = cell
    return [results[k] for k in sorted(results)]
