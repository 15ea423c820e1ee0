"""Command-line entry point: ``kanae {synth,prepare,train,evaluate,compare,report}``.

Every command reads an optional YAML config (``--config``); command-line flags
override file values.  Exit status: 0 on success, 1 on a runtime failure, 2 on
a usage or configuration error.

Output layout under ``--out``::

    subsets/subset_<size>.npz
    models/<variant>/<variant>_n<size>_s<seed:03d>.kae     (+ .history.json)
    reports/<variant>_n<size>_alpha<alpha>.csv
    compare/posteriors_alpha<alpha>.csv
    summary/fault_summary_alpha<alpha>.csv, summary/category_series_alpha<alpha>.csv
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import __version__
from .bayes import RopeConfig, posterior_sweep, write_posterior_table
from .data import (
    SUBSET_SIZES,
    TEST_FAULT_ONSET,
    FaultScenario,
    build_subsets,
    load_dataset,
    load_subset,
    save_subset,
    synth_plant,
    write_dataset,
)
from .detect import (
    aggregate,
    evaluate_profile,
    load_profile,
    read_report_rows,
    report_rows,
    write_report_rows,
)
from .errors import ConfigurationError, DataError, KanaeError
from .model import VARIANTS, default_architecture, normalize_variant
from .train import TrainConfig, cell_name, sweep

logger = logging.getLogger("kanae")

COMPARE_VARIANTS = ("oae", "efficientkan", "fastkan", "wavkan")


class UsageError(KanaeError):
    pass


@dataclass
class ExperimentConfig:
    variants: tuple = VARIANTS
    sizes: tuple = SUBSET_SIZES
    seeds: int = 30
    data: str | None = None
    out: str = "runs"
    alpha: float = 0.05
    rope: float = 0.01
    jobs: int = 1
    split_seed: int = 0
    onset: int = TEST_FAULT_ONSET
    pairs: tuple = ()
    train: dict = field(default_factory=dict)
    bayes: dict = field(default_factory=dict)

    def train_config(self, variant: str) -> TrainConfig:
        try:
            return TrainConfig.for_variant(variant, **self.train)
        except TypeError as exc:
            raise ConfigurationError(f"bad train override: {exc}") from None

    def rope_config(self) -> RopeConfig:
        try:
            return RopeConfig(**{"rope_radius": self.rope, **self.bayes})
        except TypeError as exc:
            raise ConfigurationError(f"bad bayes override: {exc}") from None

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def n_train_for(size: int, fraction: float = 0.8) -> int:
    return int(math.floor(fraction * size + 0.5))


def regime(n_train: int) -> str:
    if n_train < 10_000:
        return "data-scarce"
    if n_train <= 100_000:
        return "data-sufficient"
    return "data-rich"


def _parse_variants(value) -> tuple:
    items = value if isinstance(value, (list, tuple)) else str(value).split(",")
    out = []
    for item in items:
        item = str(item).strip()
        if item.lower() == "all":
            out.extend(VARIANTS)
        elif item:
            out.append(normalize_variant(item))
    return tuple(dict.fromkeys(out))


def _parse_sizes(value) -> tuple:
    if isinstance(value, (list, tuple)):
        items = value
    elif str(value).strip().lower() in ("all", "default"):
        return SUBSET_SIZES
    else:
        items = str(value).split(",")
    try:
        sizes = tuple(int(str(s).replace("_", "")) for s in items if str(s).strip())
    except ValueError:
        raise ConfigurationError(f"bad size list {value!r}") from None
    if not sizes or any(s < 2 for s in sizes):
        raise ConfigurationError(f"bad size list {value!r}")
    return sizes


def _parse_pairs(value) -> tuple:
    items = value if isinstance(value, (list, tuple)) else [value]
    pairs = []
    for item in items:
        for chunk in str(item).split(","):
            if not chunk.strip():
                continue
            a, sep, b = chunk.partition(":")
            if not sep:
                raise ConfigurationError(f"pair {chunk!r} must look like A:B")
            pairs.append((normalize_variant(a), normalize_variant(b)))
    return tuple(pairs)


def load_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: expected a key-value mapping")
        values.update(loaded)
    for name in ("variant", "sizes", "seeds", "data", "out", "alpha", "rope", "jobs", "split_seed", "onset", "pair"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    known = {f.name for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    for key, v in values.items():
        key = {"variant": "variants", "pair": "pairs"}.get(key, key)
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        if key == "variants":
            v = _parse_variants(v)
        elif key == "sizes":
            v = _parse_sizes(v)
        elif key == "pairs":
            v = _parse_pairs(v)
        elif key in ("seeds", "jobs", "split_seed", "onset"):
            v = int(v)
        elif key in ("alpha", "rope"):
            v = float(v)
        elif key in ("train", "bayes") and not isinstance(v, dict):
            raise ConfigurationError(f"{key} must be a mapping")
        cfg = replace(cfg, **{key: v})
    if not 0 < cfg.alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if cfg.seeds < 1 or cfg.jobs < 1:
        raise ConfigurationError("seeds and jobs must be positive")
    return cfg


def _require_data(cfg: ExperimentConfig) -> Path:
    if not cfg.data:
        raise UsageError("--data is required")
    path = Path(cfg.data)
    if not path.exists():
        raise UsageError(f"input path not found: {path}")
    return path


def _alpha_tag(alpha: float) -> str:
    return f"alpha{alpha:g}"


# ---------------------------------------------------------------- commands

_SYNTH_KINDS = (
    ("step", 3.0),
    ("random", 3.0),
    ("drift", 6.0),
    ("stiction", 1.0),
    ("constant_position", 0.0),
)


def synthetic_scenarios(onset: int, n_faults: int = 21, n_vars: int = 33) -> list[FaultScenario]:
    """Fault ids 1..n_faults cycling through the fault kinds on spread-out variables."""
    out = []
    for f in range(1, n_faults + 1):
        kind, magnitude = _SYNTH_KINDS[(f - 1) % len(_SYNTH_KINDS)]
        out.append(FaultScenario(kind, ((7 * f) % n_vars,), magnitude, onset, f))
    return out


def cmd_synth(cfg: ExperimentConfig, args) -> list[Path]:
    """Write a synthetic normal file and a faulty test file with TEP-style columns."""
    out = cfg.out_dir
    normal = synth_plant(args.normal_runs, args.length, 33, seed=cfg.split_seed, plant_seed=args.plant_seed)
    test = synth_plant(args.test_runs, args.test_length, 33, synthetic_scenarios(cfg.onset), seed=cfg.split_seed + 1,
                       plant_seed=args.plant_seed)
    return [write_dataset(normal, out / "synthetic_normal.csv"), write_dataset(test, out / "synthetic_test.csv")]


def cmd_prepare(cfg: ExperimentConfig) -> list[Path]:
    """Split the normal-operation file into one subset file per size (skips existing files)."""
    sub_dir = cfg.out_dir / "subsets"
    todo = [s for s in cfg.sizes if not (sub_dir / f"subset_{s}.npz").exists()]
    if todo:
        runs = load_dataset(_require_data(cfg), faults=[0])
        for size, subset in build_subsets(runs, todo, seed=cfg.split_seed).items():
            save_subset(subset, sub_dir / f"subset_{size}.npz")
            logger.info("subset %d: %d train / %d val rows", size, subset.train.shape[0], subset.val.shape[0])
    return [sub_dir / f"subset_{s}.npz" for s in cfg.sizes]


def cmd_train(cfg: ExperimentConfig) -> list:
    sub_dir = cfg.out_dir / "subsets"
    datasets = {}
    for size in cfg.sizes:
        path = sub_dir / f"subset_{size}.npz"
        if not path.exists():
            raise UsageError(f"missing subset file {path}; run `kanae prepare` first")
        s = load_subset(path)
        datasets[size] = (s.train, s.val)
    n_features = next(iter(datasets.values()))[0].shape[1]
    cells = []
    failures = 0
    for variant in cfg.variants:
        arch = default_architecture(variant, n_features=n_features)
        tcfg = cfg.train_config(variant)
        res = sweep(arch, datasets, cfg.seeds, cfg=tcfg, alpha=cfg.alpha,
                    out_dir=cfg.out_dir / "models" / variant, jobs=cfg.jobs)
        for cell in res:
            if cell.error:
                failures += 1
                logger.error("%s: %s", cell_name(variant, cell.size, cell.seed), cell.error)
        cells.extend(res)
    if failures:
        raise KanaeError(f"{failures} training cell(s) failed")
    return cells


def _eval_cell(task):
    path, variant, size, seed, runs, alpha = task
    profile = load_profile(path)
    return report_rows(variant, size, seed, evaluate_profile(profile, runs, alpha=alpha))


def cmd_evaluate(cfg: ExperimentConfig) -> list[Path]:
    """One report file per (variant, size) with a row per (seed, fault)."""
    runs = None
    written = []
    for variant in cfg.variants:
        for size in cfg.sizes:
            dest = cfg.out_dir / "reports" / f"{variant}_n{size}_{_alpha_tag(cfg.alpha)}.csv"
            if dest.exists():
                written.append(dest)
                continue
            tasks = []
            for seed in range(cfg.seeds):
                path = cfg.out_dir / "models" / variant / f"{cell_name(variant, size, seed)}.kae"
                if not path.exists():
                    raise UsageError(f"missing model {path}; run `kanae train` first")
                if runs is None:
                    runs = [r for r in load_dataset(_require_data(cfg), fault_onset=cfg.onset) if r.fault_id != 0]
                    if not runs:
                        raise DataError("test file contains no faulty runs")
                tasks.append((path, variant, size, seed, runs, cfg.alpha))
            if cfg.jobs > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                    chunks = list(pool.map(_eval_cell, tasks))
            else:
                chunks = [_eval_cell(t) for t in tasks]
            written.append(write_report_rows(dest, list(itertools.chain.from_iterable(chunks))))
    return written


def _load_reports(cfg: ExperimentConfig, variant: str) -> dict:
    """Map n_train to a DetectionReport for every report file present."""
    out = {}
    for size in cfg.sizes:
        path = cfg.out_dir / "reports" / f"{variant}_n{size}_{_alpha_tag(cfg.alpha)}.csv"
        if path.exists():
            out[n_train_for(size)] = aggregate(read_report_rows(path))
    return out


def cmd_compare(cfg: ExperimentConfig) -> Path:
    pairs = cfg.pairs or tuple(itertools.combinations(COMPARE_VARIANTS, 2))
    rope = cfg.rope_config()
    rows = []
    for a, b in pairs:
        rows.extend(posterior_sweep(_load_reports(cfg, a), _load_reports(cfg, b), rope, pair=f"{a}:{b}"))
    return write_posterior_table(cfg.out_dir / "compare" / f"posteriors_{_alpha_tag(cfg.alpha)}.csv", rows)


def _fmt(v):
    return "" if v is None else repr(float(v))


def cmd_report(cfg: ExperimentConfig) -> list[Path]:
    """Per-fault summary table and category-mean FDR series against n_train."""
    out = cfg.out_dir / "summary"
    out.mkdir(parents=True, exist_ok=True)
    tag = _alpha_tag(cfg.alpha)
    fault_path = out / f"fault_summary_{tag}.csv"
    series_path = out / f"category_series_{tag}.csv"
    with open(fault_path, "w", newline="") as fh_f, open(series_path, "w", newline="") as fh_s:
        wf = csv.writer(fh_f)
        ws = csv.writer(fh_s)
        wf.writerow(["variant", "size", "n_train", "regime", "fault", "category",
                     "fdr_mean", "fdr_ci", "far_mean", "far_ci", "n_seeds"])
        ws.writerow(["variant", "size", "n_train", "regime", "category", "fdr_mean", "fdr_ci", "n_faults"])
        for variant in cfg.variants:
            for size in cfg.sizes:
                path = cfg.out_dir / "reports" / f"{variant}_n{size}_{tag}.csv"
                if not path.exists():
                    continue
                rep = aggregate(read_report_rows(path))
                n = n_train_for(size)
                for f in rep.faults.values():
                    wf.writerow([variant, size, n, regime(n), f.fault, f.category or "",
                                 _fmt(f.fdr_mean), _fmt(f.fdr_ci), _fmt(f.far_mean), _fmt(f.far_ci), f.n_seeds])
                for cat, v in rep.category_means().items():
                    ws.writerow([variant, size, n, regime(n), cat, _fmt(v["fdr_mean"]), _fmt(v["fdr_ci"]),
                                 v["n_faults"]])
    return [fault_path, series_path]


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with experiment settings")
    common.add_argument("--out", help="output directory (default: runs)")
    common.add_argument("--variant", help="comma-separated variants or 'all'")
    common.add_argument("--sizes", "--size", dest="sizes", help="comma-separated subset sizes (default: all 13)")
    common.add_argument("--seeds", type=int, help="number of seeds per size (default 30)")
    common.add_argument("--data", help="input CSV file")
    common.add_argument("--alpha", type=float, help="significance level of the control limit")
    common.add_argument("--rope", type=float, help="ROPE radius for comparisons")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--split-seed", dest="split_seed", type=int, help="seed for subset splits")
    common.add_argument("--onset", type=int, help="fault onset index in test runs (default 160)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kanae", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"kanae {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--normal-runs", dest="normal_runs", type=int, default=20)
    s.add_argument("--length", type=int, default=500)
    s.add_argument("--test-runs", dest="test_runs", type=int, default=2)
    s.add_argument("--test-length", dest="test_length", type=int, default=960)
    s.add_argument("--plant-seed", dest="plant_seed", type=int, default=0)
    sub.add_parser("prepare", parents=[common], help="build training subsets")
    sub.add_parser("train", parents=[common], help="train models over sizes and seeds")
    sub.add_parser("evaluate", parents=[common], help="score test runs, write FDR/FAR reports")
    c = sub.add_parser("compare", parents=[common], help="Bayesian signed-rank comparisons")
    c.add_argument("--pair", action="append", help="A:B variant pair (repeatable)")
    sub.add_parser("report", parents=[common], help="summary tables and plot series")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "synth":
            result = cmd_synth(cfg, args)
        else:
            result = {
                "prepare": cmd_prepare,
                "train": cmd_train,
                "evaluate": cmd_evaluate,
                "compare": cmd_compare,
                "report": cmd_report,
            }[args.command](cfg)
    except (UsageError, ConfigurationError) as exc:
        print(f"kanae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KanaeError as exc:
        print(f"kanae {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    items = result if isinstance(result, list) else [result]
    for item in items:
        if isinstance(item, Path):
            print(item)
    if args.command == "train":
        print(f"{len(items)} cells")
    return 0


if __name__ == "__main__":
    sys.exit(main())
