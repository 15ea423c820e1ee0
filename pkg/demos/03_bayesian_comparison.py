"""Comparing two detectors with the Bayesian signed-rank test.

Several seeds of two variants are trained at two training sizes on a synthetic
plant with 21 fault types.  Per-fault FDR differences on the challenging
faults feed the signed-rank posterior, which splits belief between "left is
better", "practically equivalent" and "right is better".  Training is capped at
100 epochs to keep the demo short, which handicaps the slower-converging OAE.

Run: python3 demos/03_bayesian_comparison.py   (about a minute)
"""

from dataclasses import replace

import numpy as np

from kanae.bayes import CHALLENGE_FAULTS, RopeConfig, fdr_deltas, posterior_sweep, signed_rank_posterior
from kanae.cli import n_train_for, synthetic_scenarios
from kanae.data import build_subsets, synth_plant
from kanae.detect import aggregate, evaluate_profile, rates
from kanae.model import default_architecture
from kanae.train import TrainConfig, sweep

V = 33
SIZES = (625, 1250)
SEEDS = 3

normal = synth_plant(12, 500, V, seed=0, plant_seed=0)
test = synth_plant(1, 400, V, synthetic_scenarios(onset=160), seed=1, plant_seed=0)
subsets = build_subsets(normal, SIZES, seed=0)
datasets = {s: (sub.train, sub.val) for s, sub in subsets.items()}

reports = {}
for variant in ("oae", "wavkan"):
    cfg = replace(TrainConfig.for_variant(variant), max_epochs=100)
    rows = {}
    for cell in sweep(default_architecture(variant), datasets, SEEDS, cfg):
        for fault, c in evaluate_profile(cell.profile, test).items():
            fdr, far = rates(c)
            rows.setdefault(cell.size, []).append((fault, cell.seed, fdr, far))
    reports[variant] = {n_train_for(s): aggregate(r) for s, r in rows.items()}

for n, rep in reports["wavkan"].items():
    print(f"\nn_train = {n}")
    for f in CHALLENGE_FAULTS:
        a = reports["oae"][n][f]
        b = rep[f]
        print(f"  fault {f:>2}: oae FDR {a.fdr_mean:.3f} +- {a.fdr_ci:.3f}   wavkan FDR {b.fdr_mean:.3f} +- {b.fdr_ci:.3f}")
    sample = fdr_deltas(reports["oae"][n], rep)
    print(f"  {len(sample.deltas)} deltas (one per fault, seed-averaged), mean {np.mean(sample.deltas):+.4f}")

print("\nposterior (left = oae better, right = wavkan better), ROPE radius 0.01:")
for row in posterior_sweep(reports["oae"], reports["wavkan"], RopeConfig(), pair="oae:wavkan"):
    print(f"  n_train {row['n_train']:>5}: P(left) {row['p_left']:.3f}  P(rope) {row['p_rope']:.3f}  "
          f"P(right) {row['p_right']:.3f}")

# A wider ROPE moves mass into practical equivalence.
n = max(reports["wavkan"])
sample = fdr_deltas(reports["oae"][n], reports["wavkan"][n])
for radius in (0.0, 0.01, 0.05, 0.2):
    p = signed_rank_posterior(sample, RopeConfig(rope_radius=radius))
    print(f"  ROPE {radius:<4}: {p.p_left:.3f} / {p.p_rope:.3f} / {p.p_right:.3f}")
