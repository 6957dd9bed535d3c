"""Full model assembly: embeddings -> attention -> FFN -> prediction, plus
the training objective.

The objective is masked binary cross-entropy over predicted positions
(position 1 has no history and is excluded) plus an optional contrastive
term weighted by ``lambda_``. The contrastive term compares each sequence's
final knowledge state against the state of a rule-corrupted copy of the
sequence: if the last response was correct, every earlier correct response
is flipped (a lucky-guess scenario); if it was incorrect, every earlier
incorrect response is flipped (a careless-slip scenario).

Ablation switches reproduce the reduced variants: ``use_cl=False`` drops the
contrastive term, ``use_wasserstein=False`` swaps distance scores for a
scaled dot product of means, ``use_stochastic=False`` pins every covariance
channel to ones, which collapses distances to squared Euclidean on means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import AttentionConfig, attend, w2_sq_cross, w2_sq_diag
from .data import StudentSequence
from .embeddings import (
    Batch,
    EmbeddingTables,
    GaussianSeq,
    activate_covariance,
    add_positions,
    embed_interactions,
    embed_questions,
)
from .errors import ConfigError, DataError, UsageError
from .tensor import (
    Tensor,
    clip_max,
    concat,
    dropout,
    elu_plus_one,
    exp,
    gather_steps,
    log,
    matmul,
    relu,
    reshape,
    sigmoid,
    tmean,
    tsum,
)

log_ = logging.getLogger("ukt")


@dataclass
class VariantConfig:
    """Ablation switches and the contrastive weight."""

    use_cl: bool = True
    use_wasserstein: bool = True
    use_stochastic: bool = True
    lambda_: float = 0.1
    cl_convention: str = "paper"  # "paper" or "infonce", see contrastive_loss
    distance_cap: float = 50.0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lambda_}")
        if self.cl_convention not in ("paper", "infonce"):
            raise ConfigError(f"unknown cl_convention {self.cl_convention!r}")
        if self.distance_cap <= 0:
            raise ConfigError("distance_cap must be positive")

    @classmethod
    def named_variant(cls, name: str, lambda_: float = 0.1, **kw) -> "VariantConfig":
        """The ablation table rows: ukt, no_cl, no_wdist, no_stocemb."""
        table = {
            "ukt": {},
            "no_cl": {"use_cl": False, "lambda_": 0.0},
            "no_wdist": {"use_wasserstein": False},
            "no_stocemb": {"use_stochastic": False},
        }
        if name not in table:
            raise ConfigError(f"unknown variant {name!r}")
        args = {"lambda_": lambda_, **table[name], **kw}
        return cls(**args)


@dataclass
class FfnBlock:
    """Two-layer refinement of the attended state, one path per channel."""

    mean_w1: Tensor  # (2d, d)
    mean_b1: Tensor  # (d,)
    mean_w2: Tensor  # (d, d)
    mean_b2: Tensor  # (d,)
    cov_w1: Tensor
    cov_b1: Tensor
    cov_w2: Tensor
    cov_b2: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "FfnBlock":
        def w(rows, cols):
            return Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)),
                requires_grad=True,
            )

        def b():
            # small random biases keep ReLU pre-activations off the exact
            # kink when a hidden layer saturates (zero biases would park
            # dead-unit outputs precisely at 0)
            return Tensor(rng.normal(0.0, 0.01, size=dim), requires_grad=True)

        return cls(
            mean_w1=w(2 * dim, dim), mean_b1=b(), mean_w2=w(dim, dim), mean_b2=b(),
            cov_w1=w(2 * dim, dim), cov_b1=b(), cov_w2=w(dim, dim), cov_b2=b(),
        )

    def named(self, prefix: str):
        return [
            (f"{prefix}.{name}", getattr(self, name))
            for name in (
                "mean_w1", "mean_b1", "mean_w2", "mean_b2",
                "cov_w1", "cov_b1", "cov_w2", "cov_b2",
            )
        ]


@dataclass
class ModelParams:
    """Every learnable tensor of the network."""

    tables: EmbeddingTables
    ffn: list[FfnBlock]
    predict_w: Tensor  # (2d, 1)
    predict_b: Tensor  # (1,)

    @classmethod
    def init(
        cls,
        num_kcs: int,
        num_questions: int,
        dim: int,
        max_len: int,
        blocks: int = 1,
        seed: int = 0,
        rasch: bool = True,
    ) -> "ModelParams":
        if blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {blocks}")
        rng = np.random.default_rng(seed)
        tables = EmbeddingTables.init(num_kcs, num_questions, dim, max_len, rng, rasch)
        ffn = [FfnBlock.init(dim, rng) for _ in range(blocks)]
        predict_w = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(2 * dim), size=(2 * dim, 1)),
            requires_grad=True,
        )
        predict_b = Tensor(np.zeros(1), requires_grad=True)
        return cls(tables=tables, ffn=ffn, predict_w=predict_w, predict_b=predict_b)

    @property
    def dim(self) -> int:
        return self.tables.dim

    def named(self) -> list[tuple[str, Tensor]]:
        out = list(self.tables.named())
        for i, block in enumerate(self.ffn):
            out.extend(block.named(f"ffn{i}"))
        out.append(("predict_w", self.predict_w))
        out.append(("predict_b", self.predict_b))
        return out

    def zero_grad(self) -> None:
        for _, t in self.named():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        def clone_tensor(t: Tensor) -> Tensor:
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            return c

        tables = EmbeddingTables(
            **{
                name: clone_tensor(getattr(self.tables, name))
                for name in (
                    "kc_base", "kc_variation", "response_mean", "response_cov",
                    "difficulty_mean", "difficulty_cov", "pos_mean", "pos_cov",
                )
            },
            rasch=self.tables.rasch,
        )
        ffn = [
            FfnBlock(**{n: clone_tensor(getattr(b, n)) for n in (
                "mean_w1", "mean_b1", "mean_w2", "mean_b2",
                "cov_w1", "cov_b1", "cov_w2", "cov_b2",
            )})
            for b in self.ffn
        ]
        return ModelParams(
            tables=tables,
            ffn=ffn,
            predict_w=clone_tensor(self.predict_w),
            predict_b=clone_tensor(self.predict_b),
        )


@dataclass
class ForwardOutput:
    logits: Tensor           # (B, T)
    state: GaussianSeq       # refined knowledge state, (B, T, d)
    pooled_mean: Tensor      # (B, d): final unmasked position
    pooled_cov: Tensor       # (B, d)
    predict_mask: np.ndarray  # (B, T): mask minus each sequence's first position


def ffn_refine(
    h: GaussianSeq,
    questions: GaussianSeq,
    block: FfnBlock,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> GaussianSeq:
    """Refine the attended state against the current question tokens."""

    def path(x, q, w1, b1, w2, b2):
        hidden = relu(matmul(concat([x, q], axis=-1), w1) + b1)
        if dropout_rate > 0.0:
            hidden = dropout(hidden, dropout_rate, rng)
        return matmul(hidden, w2) + b2

    mean = path(h.mean, questions.mean, block.mean_w1, block.mean_b1,
                block.mean_w2, block.mean_b2)
    cov_raw = path(h.cov, questions.cov, block.cov_w1, block.cov_b1,
                   block.cov_w2, block.cov_b2)
    return GaussianSeq(mean=mean, cov=elu_plus_one(cov_raw), mask=h.mask)


def predict_logits(state: GaussianSeq, params: ModelParams) -> Tensor:
    """Per-position logit from the rectified concatenated state channels."""
    x = relu(concat([state.mean, state.cov], axis=-1))
    eta = matmul(x, params.predict_w) + params.predict_b
    return reshape(eta, eta.shape[:-1])


def bce_loss(logits: Tensor, responses, predict_mask, reduction: str = "mean") -> Tensor:
    """Masked binary cross-entropy on logits (numerically stable form)."""
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    m = np.asarray(predict_mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise UsageError("bce_loss: no unmasked predicted positions")
    r = Tensor(np.asarray(responses, dtype=float) * m)
    keep = Tensor(m.astype(float))
    abs_eta = relu(logits) + relu(-logits)
    elem = relu(logits) - logits * r + log(exp(-abs_eta) + 1.0)
    total = tsum(elem * keep)
    return total * (1.0 / count) if reduction == "mean" else total


def build_negative_sequence(seq: StudentSequence) -> StudentSequence:
    """Corrupt a sequence into its aleatory counterpart.

    Whatever the final response was, all earlier responses equal to it are
    flipped; the final one is kept. Questions, KCs, and order are unchanged.
    """
    if len(seq) < 2:
        raise UsageError("no negative is defined for sequences shorter than 2")
    last = seq.interactions[-1].response
    flipped = [
        replace(it, response=1 - it.response) if it.response == last else it
        for it in seq.interactions[:-1]
    ]
    return StudentSequence(seq.student_id, flipped + [seq.interactions[-1]])


def negate_batch(batch: Batch) -> Batch:
    """Vectorized build_negative_sequence on an already padded batch."""
    resp = batch.response.copy()
    last_idx = batch.lengths - 1
    rows = np.arange(batch.size)
    last = resp[rows, last_idx]
    before_last = batch.mask & (np.arange(batch.max_len)[None, :] < last_idx[:, None])
    flip = before_last & (resp == last[:, None])
    resp[flip] = 1 - resp[flip]
    return Batch(batch.kc, batch.question, resp, batch.mask, batch.lengths)


def contrastive_loss(
    anchor_mean: Tensor,
    anchor_cov: Tensor,
    negative_mean: Tensor,
    negative_cov: Tensor,
    convention: str = "paper",
    distance_cap: float = 50.0,
) -> Tensor:
    """Distance-based contrastive loss over pooled knowledge states.

    ``paper`` keeps the printed sign convention: the corrupted view's
    distance is rewarded in the numerator (exp(+W2)) while other in-batch
    states enter the denominator as exp(-W2). ``infonce`` is the
    conventional variant: the anchor is pulled toward its corrupted view
    and pushed away from other in-batch states. Distances are clamped at
    ``distance_cap`` before exponentiation.
    """
    B = anchor_mean.shape[0]
    if B < 2:
        raise UsageError("contrastive_loss needs a batch of at least 2")
    w_pos = clip_max(w2_sq_diag(anchor_mean, anchor_cov, negative_mean, negative_cov),
                     distance_cap)
    w_others = clip_max(
        w2_sq_cross(anchor_mean, anchor_cov, anchor_mean, anchor_cov), distance_cap
    )
    off_diag = Tensor(1.0 - np.eye(B))
    others_term = tsum(exp(-w_others) * off_diag, axis=-1)
    if convention == "paper":
        # -log( exp(+w_pos) / (exp(+w_pos) + sum_j exp(-w_ij)) )
        losses = log(exp(w_pos) + others_term) - w_pos
    elif convention == "infonce":
        losses = log(exp(-w_pos) + others_term) + w_pos
    else:
        raise ConfigError(f"unknown cl_convention {convention!r}")
    return tmean(losses)


def _ones_cov(template: GaussianSeq) -> GaussianSeq:
    return GaussianSeq(
        mean=template.mean,
        cov=Tensor(np.ones(template.mean.shape)),
        mask=template.mask,
    )


def forward(
    batch: Batch,
    params: ModelParams,
    variant: VariantConfig,
    attn_cfg: AttentionConfig | None = None,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ForwardOutput:
    """Run the full pipeline on a padded batch."""
    if attn_cfg is None:
        attn_cfg = AttentionConfig(dim=params.dim)
    interactions = embed_interactions(batch, params.tables)
    questions = embed_questions(batch, params.tables)
    if variant.use_stochastic:
        interactions = activate_covariance(add_positions(interactions, params.tables))
        questions = activate_covariance(add_positions(questions, params.tables))
    else:
        interactions = _ones_cov(add_positions(_ones_cov(interactions), params.tables))
        questions = _ones_cov(add_positions(_ones_cov(questions), params.tables))

    state = interactions
    for block in params.ffn:
        attended = attend(
            questions, questions, state, attn_cfg,
            use_wasserstein=variant.use_wasserstein,
            dropout_rate=dropout_rate, rng=rng,
        )
        state = ffn_refine(attended, questions, block, dropout_rate, rng)
        if not variant.use_stochastic:
            state = _ones_cov(state)

    logits = predict_logits(state, params)
    last_idx = batch.lengths - 1
    pooled_mean = gather_steps(state.mean, last_idx)
    pooled_cov = gather_steps(state.cov, last_idx)
    position = np.arange(batch.max_len)[None, :]
    predict_mask = batch.mask & (position > 0)
    return ForwardOutput(
        logits=logits,
        state=state,
        pooled_mean=pooled_mean,
        pooled_cov=pooled_cov,
        predict_mask=predict_mask,
    )


def predicted_probabilities(fwd: ForwardOutput) -> np.ndarray:
    return sigmoid(fwd.logits).data


def total_loss(
    fwd: ForwardOutput,
    fwd_neg: ForwardOutput | None,
    responses,
    variant: VariantConfig,
    reduction: str = "mean",
) -> tuple[Tensor, dict]:
    """Prediction loss plus lambda-weighted contrastive term.

    Returns the scalar loss tensor and a float breakdown for logging.
    lambda == 0 (or use_cl=False) never touches the negative branch.
    """
    pred = bce_loss(fwd.logits, responses, fwd.predict_mask, reduction)
    parts = {"bce": float(pred.data)}
    cl_active = variant.use_cl and variant.lambda_ > 0.0
    if cl_active and fwd_neg is not None:
        if fwd.pooled_mean.shape[0] < 2:
            log_.warning("contrastive loss skipped: batch of 1")
        else:
            cl = contrastive_loss(
                fwd.pooled_mean, fwd.pooled_cov,
                fwd_neg.pooled_mean, fwd_neg.pooled_cov,
                convention=variant.cl_convention,
                distance_cap=variant.distance_cap,
            )
            parts["cl"] = float(cl.data)
            total = pred + variant.lambda_ * cl
            parts["total"] = float(total.data)
            return total, parts
    parts["total"] = parts["bce"]
    return pred, parts


# ---------------------------------------------------------------------------
# checkpoints: versioned flat text of named tensors
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "ukt-checkpoint v1"


def save_checkpoint(params: ModelParams, path, heads: int = 4,
                    scale: float | None = None) -> None:
    """Write a text checkpoint: header, meta lines, then named tensors.

    Values are %.17g so float64 round-trips exactly; same params always
    produce the same bytes. ``heads``/``scale`` record the attention layout
    the parameters were trained under.
    """
    tables = params.tables
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(f"meta num_kcs {tables.kc_base.shape[0]}\n")
        fh.write(f"meta num_questions {tables.difficulty_mean.shape[0]}\n")
        fh.write(f"meta dim {tables.dim}\n")
        fh.write(f"meta max_len {tables.max_len}\n")
        fh.write(f"meta blocks {len(params.ffn)}\n")
        fh.write(f"meta rasch {int(tables.rasch)}\n")
        fh.write(f"meta heads {heads}\n")
        fh.write(f"meta scale {'none' if scale is None else repr(float(scale))}\n")
        for name, tensor in _all_tensors(params):
            shape = " ".join(str(s) for s in tensor.shape)
            fh.write(f"tensor {name} {shape}\n")
            flat = tensor.data.reshape(-1)
            fh.write(" ".join(f"{v:.17g}" for v in flat) + "\n")


def _all_tensors(params: ModelParams):
    tables = params.tables
    out = [
        (name, getattr(tables, name))
        for name in (
            "kc_base", "kc_variation", "response_mean", "response_cov",
            "difficulty_mean", "difficulty_cov", "pos_mean", "pos_cov",
        )
    ]
    for i, block in enumerate(params.ffn):
        out.extend(block.named(f"ffn{i}"))
    out.append(("predict_w", params.predict_w))
    out.append(("predict_b", params.predict_b))
    return out


def load_checkpoint(path, with_meta: bool = False):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a recognized checkpoint file")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("meta "):
        _, key, value = lines[i].split(" ", 2)
        if key == "scale":
            meta[key] = None if value == "none" else float(value)
        else:
            meta[key] = int(value)
        i += 1
    meta.setdefault("heads", 4)
    meta.setdefault("scale", None)
    required = {"num_kcs", "num_questions", "dim", "max_len", "blocks", "rasch"}
    if not required <= set(meta):
        raise DataError(f"{path}: missing checkpoint metadata {required - set(meta)}")
    params = ModelParams.init(
        num_kcs=meta["num_kcs"], num_questions=meta["num_questions"],
        dim=meta["dim"], max_len=meta["max_len"], blocks=meta["blocks"],
        seed=0, rasch=bool(meta["rasch"]),
    )
    table = dict(_all_tensors(params))
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "tensor":
            raise DataError(f"{path}: unexpected line {i + 1}")
        name, shape = head[1], tuple(int(s) for s in head[2:])
        values = np.fromiter((float(v) for v in lines[i + 1].split()), dtype=float)
        if name not in table:
            raise DataError(f"{path}: unknown tensor {name!r}")
        if values.size != int(np.prod(shape)) or table[name].shape != shape:
            raise DataError(f"{path}: shape mismatch for tensor {name!r}")
        table[name].data[:] = values.reshape(shape)
        i += 2
    return (params, meta) if with_meta else params
