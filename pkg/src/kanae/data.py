"""Dataset ingestion, variable selection, training subsets and a synthetic plant.

CSV layout
----------
One header row ``run,sample,fault,<variable names>`` followed by one row per
sample.  Variable names are ``XMEAS(1)`` .. ``XMEAS(41)`` and ``XMV(1)`` ..
``XMV(11)``; the upstream spellings ``xmeas_1`` / ``xmv_1`` and the column
names ``simulationRun`` / ``faultNumber`` are accepted as aliases.  A run is
identified by the pair (fault, run); samples are numbered from 1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import solve_discrete_lyapunov

from .errors import ConfigurationError, DataError
from .train import split_simulations

__all__ = [
    "ALL_VARIABLES",
    "KEPT_VARIABLES",
    "VariableSchema",
    "RunMatrix",
    "SUBSET_SIZES",
    "TEST_FAULT_ONSET",
    "load_dataset",
    "write_dataset",
    "build_subsets",
    "SubsetData",
    "save_subset",
    "load_subset",
    "FaultScenario",
    "SyntheticPlant",
    "synth_plant",
]

ALL_VARIABLES = tuple(f"XMEAS({i})" for i in range(1, 42)) + tuple(f"XMV({i})" for i in range(1, 12))
KEPT_VARIABLES = tuple(f"XMEAS({i})" for i in range(1, 23)) + tuple(f"XMV({i})" for i in range(1, 12))
META_COLUMNS = ("run", "sample", "fault")

SUBSET_SIZES = (625, 1250, 1875, 3125, 5000, 8125, 13750, 23125, 38125, 64375, 107500, 180000, 250000)
TEST_FAULT_ONSET = 160

_META_ALIASES = {
    "run": "run",
    "simulationrun": "run",
    "sample": "sample",
    "fault": "fault",
    "faultnumber": "fault",
}
_VAR_RE = re.compile(r"^(xmeas|xmv)\s*(?:_|\()\s*(\d+)\s*\)?$", re.IGNORECASE)


def canonical_column(name: str) -> str | None:
    """Canonical spelling of a column name, or ``None`` if it is not recognised."""
    key = name.strip()
    meta = _META_ALIASES.get(key.lower().replace("_", ""))
    if meta:
        return meta
    m = _VAR_RE.match(key)
    if m:
        cand = f"{m.group(1).upper()}({int(m.group(2))})"
        if cand in ALL_VARIABLES:
            return cand
    return None


@dataclass(frozen=True)
class VariableSchema:
    kept: tuple = KEPT_VARIABLES

    def __post_init__(self):
        unknown = [v for v in self.kept if v not in ALL_VARIABLES]
        if unknown:
            raise ConfigurationError(f"unknown variables in schema: {unknown}")

    @property
    def excluded(self) -> tuple:
        return tuple(v for v in ALL_VARIABLES if v not in self.kept)


@dataclass
class RunMatrix:
    run_id: int
    fault_id: int
    samples: np.ndarray
    fault_onset: int | None = None
    variables: tuple = KEPT_VARIABLES
    sampling_interval: float = 3.0  # minutes

    def __len__(self):
        return self.samples.shape[0]


def load_dataset(path, schema: VariableSchema = VariableSchema(), fault_onset: int = TEST_FAULT_ONSET,
                 faults=None) -> list[RunMatrix]:
    """Read a CSV file into runs ordered by (fault, run), keeping only ``schema.kept`` columns.

    Faulty runs get ``fault_onset``; normal runs get ``None``.  ``faults``
    optionally restricts which fault ids are kept.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    header = pd.read_csv(path, nrows=0).columns
    rename = {}
    for col in header:
        canon = canonical_column(str(col))
        if canon is None:
            raise DataError(f"{path}: unknown column {col!r}")
        if canon in rename.values():
            raise DataError(f"{path}: duplicate column {canon}")
        rename[col] = canon
    missing = [c for c in META_COLUMNS + tuple(schema.kept) if c not in rename.values()]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    keep_raw = [c for c, canon in rename.items() if canon in META_COLUMNS or canon in schema.kept]
    df = pd.read_csv(path, usecols=keep_raw, float_precision="round_trip").rename(columns=rename)
    if faults is not None:
        df = df[df["fault"].isin([int(f) for f in faults])]
    runs = []
    length = None
    for (fault, run), g in df.groupby(["fault", "run"], sort=True):
        g = g.sort_values("sample")
        idx = g["sample"].to_numpy()
        if idx.size == 0 or np.any(np.diff(idx) != 1) or idx[0] not in (0, 1):
            raise DataError(f"{path}: ragged run (fault {fault}, run {run}): samples not contiguous")
        if length is not None and idx.size != length:
            raise DataError(
                f"{path}: ragged run (fault {fault}, run {run}): {idx.size} samples, expected {length}"
            )
        length = idx.size
        X = g[list(schema.kept)].to_numpy(dtype=float)
        runs.append(RunMatrix(int(run), int(fault), X, None if int(fault) == 0 else int(fault_onset),
                              tuple(schema.kept)))
    if not runs:
        raise DataError(f"{path}: no runs found")
    return runs


def write_dataset(runs, path) -> Path:
    """Write runs in the CSV layout described in the module docstring."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = []
    for r in runs:
        n = len(r.samples)
        df = pd.DataFrame(r.samples, columns=list(r.variables))
        df.insert(0, "fault", r.fault_id)
        df.insert(0, "sample", np.arange(1, n + 1))
        df.insert(0, "run", r.run_id)
        frames.append(df)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
    return path


# ---------------------------------------------------------------- subsets

@dataclass
class SubsetData:
    size: int
    train: np.ndarray
    val: np.ndarray
    variables: tuple = KEPT_VARIABLES

    @property
    def n_train(self) -> int:
        return self.train.shape[0]


def build_subsets(normal_runs, sizes=SUBSET_SIZES, seed: int = 0, fraction: float = 0.8) -> dict:
    """One train/validation split per subset size, drawn at run level from ``normal_runs``."""
    out = {}
    variables = getattr(normal_runs[0], "variables", KEPT_VARIABLES) if normal_runs else KEPT_VARIABLES
    for size in sizes:
        tr, va = split_simulations(normal_runs, int(size), fraction, seed)
        out[int(size)] = SubsetData(int(size), tr, va, tuple(variables))
    return out


def save_subset(subset: SubsetData, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, size=subset.size, train=subset.train, val=subset.val, variables=np.array(subset.variables))
    tmp.replace(path)
    return path


def load_subset(path) -> SubsetData:
    with np.load(path, allow_pickle=False) as z:
        return SubsetData(int(z["size"]), z["train"], z["val"], tuple(str(v) for v in z["variables"]))


# ---------------------------------------------------------------- synthetic plant

FAULT_KINDS = ("step", "random", "drift", "stiction", "constant_position")


@dataclass(frozen=True)
class FaultScenario:
    kind: str
    variables: tuple = (0,)
    magnitude: float = 3.0
    onset: int = 100
    fault_id: int = 1

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigurationError(f"unknown fault kind {self.kind!r}")
        object.__setattr__(self, "variables", tuple(int(v) for v in np.atleast_1d(self.variables)))


@dataclass
class SyntheticPlant:
    """Latent VAR(1) factors seen through a mixing matrix plus sensor noise.

    Every variable has stationary standard deviation ``scale[i]`` around
    ``offset[i]``; fault magnitudes are expressed in those units.
    """

    n_vars: int
    n_factors: int | None = None
    spectral_radius: float = 0.9
    noise: float = 0.2
    seed: int = 0
    A: np.ndarray = field(init=False, repr=False)
    innov_chol: np.ndarray = field(init=False, repr=False)
    loadings: np.ndarray = field(init=False, repr=False)
    state_cov: np.ndarray = field(init=False, repr=False)
    noise_std: np.ndarray = field(init=False, repr=False)
    norm: np.ndarray = field(init=False, repr=False)
    offset: np.ndarray = field(init=False, repr=False)
    scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_vars < 2:
            raise ConfigurationError("synthetic plant needs at least two variables")
        if not 0 <= self.spectral_radius < 1:
            raise ConfigurationError(f"unstable dynamics: spectral radius {self.spectral_radius} >= 1")
        if self.noise < 0:
            raise ConfigurationError("noise must be non-negative")
        d = self.n_factors or max(1, self.n_vars // 2)
        self.n_factors = d
        rng = np.random.default_rng([self.seed, 7])
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        eig = self.spectral_radius * np.linspace(1.0, -1.0, d) if d > 1 else np.array([self.spectral_radius])
        self.A = Q @ np.diag(eig) @ Q.T
        B = np.eye(d) + 0.5 * np.tril(rng.normal(size=(d, d)), -1)
        innov_cov = B @ B.T
        self.innov_chol = np.linalg.cholesky(innov_cov)
        self.state_cov = solve_discrete_lyapunov(self.A, innov_cov)
        self.loadings = rng.normal(size=(self.n_vars, d))
        signal_var = np.einsum("ij,jk,ik->i", self.loadings, self.state_cov, self.loadings)
        self.noise_std = self.noise * np.sqrt(signal_var)
        self.norm = 1.0 / np.sqrt(signal_var + self.noise_std**2)
        self.offset = rng.uniform(-50, 50, self.n_vars)
        self.scale = rng.uniform(0.5, 5.0, self.n_vars)

    def _normal_run(self, T: int, rng) -> np.ndarray:
        d = self.n_factors
        s = np.linalg.cholesky(self.state_cov) @ rng.normal(size=d)
        eps = rng.normal(size=(T, d)) @ self.innov_chol.T
        S = np.empty((T, d))
        for t in range(T):
            s = self.A @ s + eps[t]
            S[t] = s
        Y = S @ self.loadings.T + rng.normal(size=(T, self.n_vars)) * self.noise_std
        return self.offset + self.scale * (Y * self.norm)

    def _inject(self, X: np.ndarray, sc: FaultScenario, rng) -> np.ndarray:
        X = X.copy()
        T = X.shape[0]
        if not 0 <= sc.onset < T:
            raise ConfigurationError(f"fault onset {sc.onset} outside 0..{T - 1}")
        post = slice(sc.onset, T)
        n_post = T - sc.onset
        for v in sc.variables:
            if not 0 <= v < self.n_vars:
                raise ConfigurationError(f"fault variable {v} outside 0..{self.n_vars - 1}")
            sigma = self.scale[v]
            if sc.kind == "step":
                X[post, v] += sc.magnitude * sigma
            elif sc.kind == "random":
                X[post, v] += sc.magnitude * sigma * rng.normal(size=n_post)
            elif sc.kind == "drift":
                X[post, v] += sc.magnitude * sigma * np.arange(1, n_post + 1) / n_post
            elif sc.kind == "stiction":
                band = sc.magnitude * sigma
                held = X[sc.onset, v]
                for t in range(sc.onset, T):
                    if abs(X[t, v] - held) > band:
                        held = X[t, v]
                    X[t, v] = held
            else:
                X[post, v] = X[sc.onset, v]
        return X

    def simulate(self, n_runs: int, T: int, scenario: FaultScenario | None = None, seed=0,
                 first_run_id: int = 1) -> list[RunMatrix]:
        names = KEPT_VARIABLES if self.n_vars == len(KEPT_VARIABLES) else tuple(f"x{i}" for i in range(self.n_vars))
        runs = []
        for k in range(n_runs):
            key = [int(v) for v in np.atleast_1d(seed)]
            X = self._normal_run(T, np.random.default_rng(key + [k]))
            if scenario is None:
                runs.append(RunMatrix(first_run_id + k, 0, X, None, names))
            else:
                X = self._inject(X, scenario, np.random.default_rng(key + [k, 1]))
                runs.append(RunMatrix(first_run_id + k, scenario.fault_id, X, scenario.onset, names))
        return runs


def synth_plant(n_runs: int, T: int, V: int, scenarios=(), seed: int = 0, plant_seed: int = 0,
                **plant_kwargs) -> list[RunMatrix]:
    """Generate runs from the plant identified by ``plant_seed``.

    With no scenarios, ``n_runs`` normal runs; otherwise ``n_runs`` faulty runs
    per scenario.  Runs drawn with the same ``plant_seed`` share dynamics, so
    training and test data can be generated separately.
    """
    plant = SyntheticPlant(V, seed=plant_seed, **plant_kwargs)
    if not scenarios:
        return plant.simulate(n_runs, T, None, seed)
    runs = []
    for i, sc in enumerate(scenarios):
        runs.extend(plant.simulate(n_runs, T, sc, seed=(seed, i + 1), first_run_id=1 + i * n_runs))
    return runs
