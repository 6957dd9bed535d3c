#!/usr/bin/env python3
"""Simulate student cohorts with separable epistemic and aleatory noise.

Each student has a latent ability; each KC a difficulty; mastery grows with
practice. Guess/slip corruption injects response noise that does NOT
reflect knowledge - exactly the kind of uncertainty the contrastive loss is
meant to absorb.
"""

import numpy as np

from ukt.data import prepare, write_csv_flat
from ukt.synth import SynthSpec, generate_students, observed_correct_probability

rng = np.random.default_rng(0)

# A clean cohort: no guess/slip, wide ability spread -> responses are
# almost a deterministic function of (student, KC, practice count).
clean_spec = SynthSpec(num_students=50, num_kcs=20, seq_len=(20, 60),
                       ability_std=6.0, guess=0.0, slip=0.0, seed=11)
clean, truth = generate_students(clean_spec, return_truth=True)
responses = np.concatenate([np.array(s.responses) for s in clean.sequences])
print(f"clean cohort: {clean.num_interactions} interactions, "
      f"correct-rate {responses.mean():.3f}")
print(f"latent p distribution: 10% quantile {np.quantile(truth, 0.1):.3f}, "
      f"90% quantile {np.quantile(truth, 0.9):.3f}")

# The same cohort with guess/slip noise: observed correctness detaches from
# latent mastery at the advertised analytic rate.
noisy_spec = SynthSpec(num_students=50, num_kcs=20, seq_len=(20, 60),
                       ability_std=6.0, guess=0.2, slip=0.2, seed=11)
noisy, truth_n = generate_students(noisy_spec, return_truth=True)
observed = np.concatenate([np.array(s.responses) for s in noisy.sequences])
analytic = observed_correct_probability(truth_n, 0.2, 0.2).mean()
print(f"\nnoisy cohort (g=s=0.2): observed rate {observed.mean():.3f}, "
      f"analytic {analytic:.3f}")

# Cohorts flow through the same pipeline as parsed logs.
prepared = prepare(noisy, min_len=3, max_len=40)
print(f"after prepare(): {len(prepared.sequences)} sequences, "
      f"max length {max(len(s) for s in prepared.sequences)}")

write_csv_flat(noisy, "noisy_cohort.csv")
print("wrote noisy_cohort.csv (csv-flat layout)")
