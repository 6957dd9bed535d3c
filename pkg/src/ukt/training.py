"""Optimization loop, metrics, and evaluation.

Training is plain Adam over the full parameter list with per-epoch
validation AUC, early stopping on patience, and best-checkpoint return.
Everything is deterministic given the config seed: initialization, batch
shuffling, and dropout all draw from one seeded generator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig
from .data import DatasetBundle, FoldPlan, StudentSequence
from .embeddings import Batch
from .errors import ConfigError, DataError, NumericError
from .model import (
    ForwardOutput,
    ModelParams,
    VariantConfig,
    forward,
    negate_batch,
    total_loss,
)
from .tensor import Tape, Tensor, backward, sigmoid

log_ = logging.getLogger("ukt")

LR_GRID = (1e-3, 1e-4, 1e-5)
DROPOUT_GRID = (0.05, 0.1, 0.3, 0.5)
DIM_GRID = (64, 128, 256, 512)
BLOCK_GRID = (1, 2, 4)
HEAD_GRID = (4, 8)
LAMBDA_GRID = (0.01, 0.02, 0.05, 0.07, 0.1, 0.5, 1.0)


@dataclass
class TrainConfig:
    max_epochs: int = 200
    patience: int = 10  # epochs without a validation-AUC improvement
    learning_rate: float = 1e-3
    dropout: float = 0.05
    dim: int = 64
    blocks: int = 1
    heads: int = 4
    scale: float | None = None
    batch_size: int = 64
    seed: int = 0
    max_len: int = 200
    min_len: int = 3
    loss_reduction: str = "mean"
    fold: int = 0
    rasch: bool = True

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("max_epochs must be >= 1 and patience >= 0")
        if self.learning_rate <= 0 or not 0.0 <= self.dropout < 1.0:
            raise ConfigError("learning_rate must be > 0 and dropout in [0, 1)")
        if self.batch_size < 1 or self.dim < 1 or self.blocks < 1:
            raise ConfigError("batch_size, dim, and blocks must be >= 1")
        for value, grid, name in (
            (self.learning_rate, LR_GRID, "learning_rate"),
            (self.dropout, DROPOUT_GRID, "dropout"),
            (self.dim, DIM_GRID, "dim"),
            (self.blocks, BLOCK_GRID, "blocks"),
            (self.heads, HEAD_GRID, "heads"),
        ):
            if value not in grid:
                log_.debug("%s=%s overrides the declared grid %s", name, value, grid)

    def attention(self) -> AttentionConfig:
        return AttentionConfig(dim=self.dim, heads=self.heads, scale=self.scale)


@dataclass
class EvalReport:
    auc: float = float("nan")
    accuracy: float = float("nan")
    loss_trace: list = field(default_factory=list)
    val_auc_trace: list = field(default_factory=list)
    per_sequence_cov_mean: list = field(default_factory=list)
    best_epoch: int = -1


class Adam:
    """Adam with bias correction; updates parameter data in place."""

    def __init__(self, params, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def auc(scores, labels) -> float:
    """Rank-sum AUC with average ranks on ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigError("auc expects matching 1-d scores and labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc is undefined when only one class is present")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg_rank = (starts + ends + 1) / 2.0  # 1-based average rank per tie group
    ranks = avg_rank[inverse]
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    return float(((scores >= threshold).astype(int) == labels).mean())


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _length_buckets(indices, lengths, batch_size):
    """Group sequence indices into batches of similar length (less padding)."""
    by_len = sorted(indices, key=lambda i: (lengths[i], i))
    return [by_len[lo : lo + batch_size] for lo in range(0, len(by_len), batch_size)]


def collect_predictions(
    params: ModelParams,
    sequences: list[StudentSequence],
    variant: VariantConfig,
    attn_cfg: AttentionConfig,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray, list]:
    """Pooled (probability, label) pairs plus per-sequence covariance means."""
    probs, labels = [], []
    cov_means = [0.0] * len(sequences)
    lengths = [len(s) for s in sequences]
    for bucket in _length_buckets(range(len(sequences)), lengths, batch_size):
        batch = Batch.from_sequences([sequences[i] for i in bucket])
        fwd = forward(batch, params, variant, attn_cfg)
        p = sigmoid(fwd.logits).data
        m = fwd.predict_mask
        probs.append(p[m])
        labels.append(batch.response[m])
        cov = fwd.state.cov.data
        for row, i in enumerate(bucket):
            cov_means[i] = float(cov[row, batch.mask[row]].mean())
    return np.concatenate(probs), np.concatenate(labels), cov_means


def evaluate(
    params: ModelParams,
    sequences: list[StudentSequence],
    variant: VariantConfig | None = None,
    attn_cfg: AttentionConfig | None = None,
    threshold: float = 0.5,
    batch_size: int = 64,
) -> EvalReport:
    """AUC/accuracy over all predicted positions pooled across sequences."""
    if not sequences:
        raise DataError("evaluate: no sequences")
    variant = variant or VariantConfig()
    attn_cfg = attn_cfg or AttentionConfig(dim=params.dim)
    probs, labels, cov_means = collect_predictions(
        params, sequences, variant, attn_cfg, batch_size
    )
    ids = [s.student_id for s in sequences]
    return EvalReport(
        auc=auc(probs, labels),
        accuracy=accuracy(probs, labels, threshold),
        per_sequence_cov_mean=list(zip(ids, cov_means)),
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def fit(
    train_seqs: list[StudentSequence],
    val_seqs: list[StudentSequence],
    num_kcs: int,
    num_questions: int,
    cfg: TrainConfig,
    variant: VariantConfig | None = None,
    target_auc: float | None = None,
    metrics_path=None,
) -> tuple[ModelParams, EvalReport]:
    """Adam training with early stopping on validation AUC.

    Returns the best-validation checkpoint (a copy) and the training report.
    ``target_auc`` stops as soon as validation AUC reaches the target, which
    keeps overfit benchmarks cheap.
    """
    if not train_seqs or not val_seqs:
        raise DataError("fit: empty train or validation set")
    variant = variant or VariantConfig()
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.init(
        num_kcs=num_kcs, num_questions=num_questions, dim=cfg.dim,
        max_len=cfg.max_len, blocks=cfg.blocks, seed=cfg.seed, rasch=cfg.rasch,
    )
    attn_cfg = cfg.attention()
    optimizer = Adam(params.named(), cfg.learning_rate)
    needs_negative = variant.use_cl and variant.lambda_ > 0.0

    report = EvalReport()
    best_auc = -np.inf
    best_params = params.copy()
    best_epoch = -1
    stall = 0
    metrics_rows = []

    # fixed length-bucketed batch composition; order reshuffled per epoch
    lengths = [len(s) for s in train_seqs]
    buckets = _length_buckets(range(len(train_seqs)), lengths, cfg.batch_size)

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(buckets))
        epoch_losses = []
        for step, which in enumerate(order):
            chunk = [train_seqs[i] for i in buckets[which]]
            batch = Batch.from_sequences(chunk)
            with Tape():
                fwd = forward(batch, params, variant, attn_cfg,
                              dropout_rate=cfg.dropout, rng=rng)
                fwd_neg = None
                if needs_negative and batch.size >= 2:
                    fwd_neg = forward(negate_batch(batch), params, variant,
                                      attn_cfg, dropout_rate=cfg.dropout, rng=rng)
                loss, _ = total_loss(fwd, fwd_neg, batch.response, variant,
                                     cfg.loss_reduction)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(
                        f"training diverged: non-finite loss at epoch {epoch}, "
                        f"step {step}"
                    )
                backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            epoch_losses.append(value)

        train_loss = float(np.mean(epoch_losses))
        val = evaluate(params, val_seqs, variant, attn_cfg,
                       batch_size=cfg.batch_size)
        report.loss_trace.append(train_loss)
        report.val_auc_trace.append(val.auc)
        metrics_rows.append((epoch, train_loss, val.auc, val.accuracy))
        log_.info("epoch %d: loss %.5f, val auc %.4f, val acc %.4f",
                  epoch, train_loss, val.auc, val.accuracy)

        if val.auc > best_auc:
            best_auc = val.auc
            best_params = params.copy()
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
        if target_auc is not None and best_auc >= target_auc:
            break
        if stall > cfg.patience:
            log_.info("early stop at epoch %d (best %.4f at %d)",
                      epoch, best_auc, best_epoch)
            break

    report.auc = best_auc
    report.best_epoch = best_epoch
    final = evaluate(best_params, val_seqs, variant, attn_cfg,
                     batch_size=cfg.batch_size)
    report.accuracy = final.accuracy
    report.per_sequence_cov_mean = final.per_sequence_cov_mean

    if metrics_path is not None:
        _write_metrics(metrics_path, metrics_rows)
    return best_params, report


def _write_metrics(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,val_auc,val_acc\n")
        for epoch, loss, vauc, vacc in rows:
            fh.write(f"{epoch},{loss:.10g},{vauc:.10g},{vacc:.10g}\n")


def train(
    plan: FoldPlan,
    cfg: TrainConfig,
    variant: VariantConfig | None = None,
    metrics_path=None,
) -> tuple[ModelParams, EvalReport]:
    """Train on a fold plan: fold ``cfg.fold`` validates, the rest trains."""
    bundle = plan.bundle
    return fit(
        plan.train_sequences(cfg.fold),
        plan.val_sequences(cfg.fold),
        bundle.num_kcs,
        bundle.num_questions,
        cfg,
        variant,
        metrics_path=metrics_path,
    )


def train_overfit(
    bundle: DatasetBundle,
    cfg: TrainConfig,
    variant: VariantConfig | None = None,
    target_auc: float | None = None,
) -> tuple[ModelParams, EvalReport]:
    """Memorization benchmark: validate on the training data itself."""
    seqs = bundle.sequences
    return fit(
        seqs, seqs, bundle.num_kcs, bundle.num_questions, cfg, variant,
        target_auc=target_auc,
    )
