"""Synthetic student cohorts with controllable uncertainty.

Epistemic variation comes from per-student ability (and a per-KC difficulty
offset); aleatory noise comes from guess/slip response corruption. Each
student carries a latent mastery value per KC:

    mastery[k] = ability - difficulty[k] + learning_rate * exposures[k]

The true probability of answering a KC correctly is sigmoid(mastery); the
observed response is correct with probability p*(1-slip) + (1-p)*guess.
Output uses the same bundle schema as the log loaders, so generated cohorts
flow through the identical pipeline (and can be written as csv-flat).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetBundle, Interaction, StudentSequence
from .errors import ConfigError


@dataclass
class SynthSpec:
    num_students: int = 200
    num_kcs: int = 100
    seq_len: tuple[int, int] = (50, 200)
    ability_mean: float = 0.0
    ability_std: float = 3.0
    kc_difficulty_std: float = 1.0
    learning_rate: float = 0.05
    guess: float = 0.0
    slip: float = 0.0
    seed: int = 7

    def __post_init__(self):
        if not (0.0 <= self.guess < 0.5 and 0.0 <= self.slip < 0.5):
            raise ConfigError("guess and slip must lie in [0, 0.5)")
        lo, hi = self.seq_len
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad seq_len range {self.seq_len}")
        if self.num_students < 1 or self.num_kcs < 1:
            raise ConfigError("need at least one student and one KC")
        if self.ability_std < 0 or self.kc_difficulty_std < 0:
            raise ConfigError("spread parameters must be nonnegative")


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def generate_students(
    spec: SynthSpec, return_truth: bool = False
) -> DatasetBundle | tuple[DatasetBundle, np.ndarray]:
    """Simulate one cohort; deterministic given the spec seed.

    With ``return_truth`` the per-interaction latent correctness
    probabilities (before guess/slip corruption) are returned as well.
    """
    rng = np.random.default_rng(spec.seed)
    bundle = DatasetBundle(sequences=[])
    # one question per KC; register vocab in numeric order so ids are stable
    for k in range(spec.num_kcs):
        bundle.kc_vocab.add(f"kc{k}")
        bundle.question_vocab.add(f"q{k}")

    difficulty = rng.normal(0.0, spec.kc_difficulty_std, size=spec.num_kcs)
    truth = []
    lo, hi = spec.seq_len
    for student in range(spec.num_students):
        ability = rng.normal(spec.ability_mean, spec.ability_std)
        mastery = ability - difficulty.copy()
        length = int(rng.integers(lo, hi + 1))
        its = []
        for t in range(length):
            k = int(rng.integers(0, spec.num_kcs))
            p = float(_sigmoid(np.array(mastery[k])))
            correct = rng.random() < p
            if correct:
                response = 0 if rng.random() < spec.slip else 1
            else:
                response = 1 if rng.random() < spec.guess else 0
            truth.append(p)
            its.append(
                Interaction(
                    question_id=bundle.question_vocab.get(f"q{k}"),
                    kc_ids=(bundle.kc_vocab.get(f"kc{k}"),),
                    response=response,
                    time_index=t,
                )
            )
            mastery[k] += spec.learning_rate
        bundle.sequences.append(StudentSequence(student + 1, its))
    if return_truth:
        return bundle, np.array(truth)
    return bundle


def merge_cohorts(*bundles: DatasetBundle) -> DatasetBundle:
    """Concatenate cohorts that share a vocabulary, renumbering students."""
    if not bundles:
        raise ConfigError("merge_cohorts needs at least one bundle")
    first = bundles[0]
    for other in bundles[1:]:
        if (other.num_kcs != first.num_kcs
                or other.num_questions != first.num_questions):
            raise ConfigError("cohorts must share a vocabulary to merge")
    merged = DatasetBundle([], first.kc_vocab, first.question_vocab)
    next_id = 1
    for bundle in bundles:
        remap = {}
        for seq in bundle.sequences:
            if seq.student_id not in remap:
                remap[seq.student_id] = next_id
                next_id += 1
            merged.sequences.append(
                StudentSequence(remap[seq.student_id], seq.interactions)
            )
    return merged


def observed_correct_probability(p, guess: float, slip: float):
    """Analytic response rate: p*(1-slip) + (1-p)*guess."""
    p = np.asarray(p, dtype=float)
    return p * (1.0 - slip) + (1.0 - p) * guess
