#!/usr/bin/env python3
"""Uncertainty analysis at miniature scale: covariance heatmap data, a
contrastive-weight sweep, and the noise-robustness comparison.

This is a fast, shrunken version of what the acceptance suite runs with
more seeds and a denser grid. Expect a few minutes on one core.
"""

import numpy as np

from ukt.data import split_folds
from ukt.experiments import (
    aleatory_stress_eval,
    export_covariance_heatmap,
    lambda_sweep,
)
from ukt.model import VariantConfig
from ukt.synth import SynthSpec, generate_students, merge_cohorts
from ukt.training import TrainConfig, train

cfg = TrainConfig(max_epochs=20, patience=5, dim=32, heads=4, batch_size=32,
                  learning_rate=1e-3, dropout=0.05, max_len=64, seed=31)

# --- covariance heatmaps: two cohorts differing only in ability spread ----
tight = SynthSpec(num_students=30, num_kcs=20, seq_len=(15, 40),
                  ability_std=0.5, guess=0.1, slip=0.1, seed=31)
wide = SynthSpec(num_students=30, num_kcs=20, seq_len=(15, 40),
                 ability_std=5.0, guess=0.1, slip=0.1, seed=32)
merged = merge_cohorts(generate_students(tight), generate_students(wide))
plan = split_folds(merged, test_fraction=0.2, k=5, seed=31)
params, report = train(plan, cfg, VariantConfig(lambda_=0.1))
rows = export_covariance_heatmap(params, merged.sequences, "heatmap.csv",
                                 VariantConfig(), cfg)
per_seq = rows.mean(axis=1)
print(f"covariance means: tight-cohort avg {per_seq[:30].mean():.4f}, "
      f"wide-cohort avg {per_seq[30:].mean():.4f}")
print("wrote heatmap.csv (rows = sequences, columns = state dimensions)")

# --- contrastive-weight sweep on a noisy cohort ---------------------------
noisy = generate_students(
    SynthSpec(num_students=60, num_kcs=20, seq_len=(15, 40),
              ability_std=2.0, guess=0.15, slip=0.15, seed=33)
)
noisy_plan = split_folds(noisy, test_fraction=0.2, k=5, seed=33)
sweep = lambda_sweep(noisy_plan, cfg, [0.0, 0.05, 0.1, 0.5], folds=1,
                     out_path="lambda_sweep.csv")
for lam, mean_auc, std in sweep:
    print(f"lambda {lam:<5} test AUC {mean_auc:.4f} +- {std:.4f}")

# --- robustness: degradation under evaluation-time response flips ---------
trained = {}
for name in ("ukt", "no_cl"):
    variant = VariantConfig.named_variant(name, lambda_=0.1)
    trained[name], _ = train(noisy_plan, cfg, variant)
stress = aleatory_stress_eval(trained, noisy_plan.test_sequences(),
                              noise_rate=0.2, cfg=cfg, seed=33,
                              out_path="stress_eval.csv")
for row in stress:
    print(f"{row.variant}: clean {row.auc_clean:.4f} -> noised "
          f"{row.auc_noised:.4f} (drop {row.degradation:.4f})")
