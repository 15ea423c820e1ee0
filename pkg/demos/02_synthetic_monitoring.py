"""Fault detection on a synthetic plant, end to end.

A latent-factor plant stands in for the Tennessee Eastman simulator.  We train
two detectors on normal data, set a KDE control limit on the training SPE, and
watch how each fault kind pushes the SPE over the limit.

Run: python3 demos/02_synthetic_monitoring.py   (about half a minute)
"""

import numpy as np

from kanae.data import FaultScenario, synth_plant
from kanae.detect import evaluate_profile, rates
from kanae.model import default_architecture
from kanae.train import split_simulations, train_cell

V = 12
ONSET = 100

normal = synth_plant(12, 250, V, seed=0, plant_seed=3)
train_rows, val_rows = split_simulations(normal, 2500, seed=0)
print(f"normal data: {len(normal)} runs, train {train_rows.shape}, validation {val_rows.shape}")

# One scenario per fault kind, each on a different variable.  Magnitudes are in
# units of the variable's normal standard deviation.
scenarios = [
    FaultScenario("step", (0,), 3.0, ONSET, 1),
    FaultScenario("random", (3,), 3.0, ONSET, 2),
    FaultScenario("drift", (5,), 6.0, ONSET, 3),
    FaultScenario("stiction", (7,), 1.0, ONSET, 4),
    FaultScenario("constant_position", (9,), 0.0, ONSET, 5),
]
test = synth_plant(10, 300, V, scenarios, seed=1, plant_seed=3)

for variant in ("oae", "wavkan"):
    arch = default_architecture(variant, n_features=V, latent=V // 2)
    profile, hist = train_cell(arch, train_rows, val_rows, seed=0)
    print(f"\n{variant}: {hist.n_epochs} epochs ({hist.stop_reason}), best validation MSE "
          f"{min(hist.val_loss):.4f}, control limit {profile.threshold.q_lim:.3f}")

    # SPE trace of the first step-fault run, averaged over windows of 25 samples
    q = profile.score(test[0].samples)
    windows = q.reshape(-1, 25).mean(axis=1)
    print("  mean SPE per 25-sample window, step fault:", np.round(windows, 2))

    counts = evaluate_profile(profile, test)
    for sc in scenarios:
        fdr, far = rates(counts[sc.fault_id])
        print(f"  fault {sc.fault_id} {sc.kind:<18} FDR {100 * fdr:6.2f}%   FAR {100 * far:5.2f}%")

    strict = evaluate_profile(profile, test, alpha=0.01)
    far_05 = np.mean([rates(c)[1] for c in counts.values()])
    far_01 = np.mean([rates(c)[1] for c in strict.values()])
    print(f"  mean FAR at alpha 0.05: {100 * far_05:.2f}%, at alpha 0.01: {100 * far_01:.2f}%")
