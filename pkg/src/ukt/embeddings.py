"""Gaussian token construction for interaction and question sequences.

Every position t carries two diagonal Gaussians built from learned tables:

* the interaction view (what the student did): base KC vector plus the
  response embedding scaled elementwise by the KC's variation vector,
* the question view (what was asked): base KC vector plus the question's
  difficulty embedding scaled by the same variation vector.

Means and raw covariances are produced by the same composition, get their
own position tables added, and the covariance channel is then mapped through
ELU(x) + 1 so every entry is strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import StudentSequence
from .errors import ConfigError, DataError
from .tensor import Tensor, elu_plus_one, embedding

INIT_KIND = "gaussian"  # zero-mean, std 1/sqrt(dim)


@dataclass
class Batch:
    """Padded index arrays for a batch of single-KC interaction sequences."""

    kc: np.ndarray        # (B, T) int
    question: np.ndarray  # (B, T) int
    response: np.ndarray  # (B, T) int, 0/1; padding reads as 0
    mask: np.ndarray      # (B, T) bool, True = real token
    lengths: np.ndarray   # (B,) int

    @classmethod
    def from_sequences(cls, sequences: list[StudentSequence]) -> "Batch":
        if not sequences:
            raise DataError("cannot batch zero sequences")
        lengths = np.array([len(s) for s in sequences], dtype=int)
        T = int(lengths.max())
        B = len(sequences)
        kc = np.zeros((B, T), dtype=int)
        question = np.zeros((B, T), dtype=int)
        response = np.zeros((B, T), dtype=int)
        mask = np.zeros((B, T), dtype=bool)
        for i, seq in enumerate(sequences):
            for t, it in enumerate(seq.interactions):
                if len(it.kc_ids) != 1:
                    raise DataError(
                        "batching requires KC-expanded sequences "
                        f"(student {seq.student_id} has a {len(it.kc_ids)}-KC row)"
                    )
                kc[i, t] = it.kc_ids[0]
                question[i, t] = it.question_id
                response[i, t] = it.response
            mask[i, : lengths[i]] = True
        return cls(kc, question, response, mask, lengths)

    @property
    def size(self) -> int:
        return self.kc.shape[0]

    @property
    def max_len(self) -> int:
        return self.kc.shape[1]


@dataclass
class GaussianSeq:
    """Paired mean/covariance sequences with a validity mask.

    ``cov`` holds the diagonal of the covariance matrix; after
    ``activate_covariance`` every unmasked entry is strictly positive.
    """

    mean: Tensor  # (..., T, d)
    cov: Tensor   # (..., T, d)
    mask: np.ndarray  # (..., T) bool


@dataclass
class EmbeddingTables:
    """All learned lookup tables feeding the Gaussian token construction."""

    kc_base: Tensor          # (num_kcs, d): latent KC vector, shared by both views
    kc_variation: Tensor     # (num_kcs, d): per-KC scaling of difficulty/response
    response_mean: Tensor    # (2, d)
    response_cov: Tensor     # (2, d)
    difficulty_mean: Tensor  # (num_questions, d)
    difficulty_cov: Tensor   # (num_questions, d)
    pos_mean: Tensor         # (max_len, d)
    pos_cov: Tensor          # (max_len, d)
    rasch: bool = True       # False freezes difficulty/variation at zero

    @classmethod
    def init(
        cls,
        num_kcs: int,
        num_questions: int,
        dim: int,
        max_len: int,
        rng: np.random.Generator,
        rasch: bool = True,
    ) -> "EmbeddingTables":
        std = 1.0 / np.sqrt(dim)

        def table(rows):
            return Tensor(rng.normal(0.0, std, size=(rows, dim)), requires_grad=True)

        tables = cls(
            kc_base=table(num_kcs),
            kc_variation=table(num_kcs),
            response_mean=table(2),
            response_cov=table(2),
            difficulty_mean=table(num_questions),
            difficulty_cov=table(num_questions),
            pos_mean=table(max_len),
            pos_cov=table(max_len),
            rasch=rasch,
        )
        if not rasch:
            for t in (tables.kc_variation, tables.difficulty_mean, tables.difficulty_cov):
                t.data[:] = 0.0
                t.requires_grad = False
        return tables

    @property
    def dim(self) -> int:
        return self.kc_base.shape[1]

    @property
    def max_len(self) -> int:
        return self.pos_mean.shape[0]

    def named(self):
        pairs = [
            ("kc_base", self.kc_base),
            ("kc_variation", self.kc_variation),
            ("response_mean", self.response_mean),
            ("response_cov", self.response_cov),
            ("difficulty_mean", self.difficulty_mean),
            ("difficulty_cov", self.difficulty_cov),
            ("pos_mean", self.pos_mean),
            ("pos_cov", self.pos_cov),
        ]
        return [(n, t) for n, t in pairs if t.requires_grad]


def embed_interactions(batch: Batch, tables: EmbeddingTables) -> GaussianSeq:
    """Response-aware tokens: base + response * variation, raw covariance."""
    base = embedding(tables.kc_base, batch.kc)
    variation = embedding(tables.kc_variation, batch.kc)
    r_mean = embedding(tables.response_mean, batch.response)
    r_cov = embedding(tables.response_cov, batch.response)
    return GaussianSeq(
        mean=base + r_mean * variation,
        cov=base + r_cov * variation,
        mask=batch.mask,
    )


def embed_questions(batch: Batch, tables: EmbeddingTables) -> GaussianSeq:
    """Question tokens: base + difficulty * variation; response-free."""
    base = embedding(tables.kc_base, batch.kc)
    variation = embedding(tables.kc_variation, batch.kc)
    d_mean = embedding(tables.difficulty_mean, batch.question)
    d_cov = embedding(tables.difficulty_cov, batch.question)
    return GaussianSeq(
        mean=base + d_mean * variation,
        cov=base + d_cov * variation,
        mask=batch.mask,
    )


def add_positions(g: GaussianSeq, tables: EmbeddingTables) -> GaussianSeq:
    """Add per-index position vectors (separate tables for mean and cov)."""
    T = g.mean.shape[-2]
    if T > tables.max_len:
        raise ConfigError(
            f"sequence length {T} exceeds position table size {tables.max_len}"
        )
    idx = np.arange(T)
    keep = g.mask[..., None].astype(float)  # padded positions stay untouched
    p_mean = embedding(tables.pos_mean, idx) * keep
    p_cov = embedding(tables.pos_cov, idx) * keep
    return GaussianSeq(mean=g.mean + p_mean, cov=g.cov + p_cov, mask=g.mask)


def activate_covariance(g: GaussianSeq) -> GaussianSeq:
    """ELU(x) + 1 on the covariance channel; mean passes through."""
    return GaussianSeq(mean=g.mean, cov=elu_plus_one(g.cov), mask=g.mask)
