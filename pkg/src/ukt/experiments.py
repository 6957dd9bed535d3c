"""Analysis experiments: contrastive-weight sweeps, covariance heatmaps,
noise-robustness comparisons, and the ablation table.

Every routine emits a headered UTF-8 CSV next to returning its rows, so the
outputs drop straight into any plotting tool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .data import DatasetBundle, FoldPlan, StudentSequence
from .errors import ConfigError, DataError
from .model import ModelParams, VariantConfig
from .training import EvalReport, TrainConfig, collect_predictions, evaluate, train

log_ = logging.getLogger("ukt")

VARIANT_ORDER = ("ukt", "no_cl", "no_wdist", "no_stocemb")


def _write_csv(path, header: str, rows) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


# ---------------------------------------------------------------------------
# lambda sweep
# ---------------------------------------------------------------------------

def lambda_sweep(
    plan: FoldPlan,
    cfg: TrainConfig,
    grid,
    variant: VariantConfig | None = None,
    folds: int | None = None,
    out_path=None,
) -> list[tuple[float, float, float]]:
    """Train one model per contrastive weight; report test AUC per fold.

    Returns (lambda, mean_auc, std_auc) rows, one per grid entry, and
    writes them as CSV when ``out_path`` is given. lambda == 0 is exactly
    the no-CL variant.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("lambda_sweep: empty grid")
    variant = variant or VariantConfig()
    n_folds = len(plan.folds) if folds is None else folds
    test_seqs = plan.test_sequences()
    rows = []
    for lam in grid:
        v = dc_replace(variant, lambda_=lam, use_cl=lam > 0.0)
        aucs = []
        for fold in range(n_folds):
            fold_cfg = dc_replace(cfg, fold=fold)
            params, _ = train(plan, fold_cfg, v)
            aucs.append(evaluate(params, test_seqs, v, cfg.attention()).auc)
        rows.append((float(lam), float(np.mean(aucs)), float(np.std(aucs))))
        log_.info("lambda %.3g: auc %.4f +- %.4f", *rows[-1])
    _write_csv(out_path, "lambda,mean_auc,std_auc", rows)
    return rows


# ---------------------------------------------------------------------------
# covariance heatmap export
# ---------------------------------------------------------------------------

def export_covariance_heatmap(
    params: ModelParams,
    sequences: list[StudentSequence],
    path,
    variant: VariantConfig | None = None,
    cfg: TrainConfig | None = None,
    per_dim: bool = True,
) -> np.ndarray:
    """Average refined covariance per sequence, as a plottable matrix.

    Rows are sequences; columns are feature dimensions (mean over unmasked
    positions), or a single column holding the mean over positions and
    dimensions when ``per_dim`` is false.
    """
    if not sequences:
        raise DataError("export_covariance_heatmap: no sequences")
    variant = variant or VariantConfig()
    cfg = cfg or TrainConfig(dim=params.dim)
    attn_cfg = cfg.attention()
    from .embeddings import Batch
    from .model import forward

    rows = np.zeros((len(sequences), params.dim if per_dim else 1))
    lengths = [len(s) for s in sequences]
    order = sorted(range(len(sequences)), key=lambda i: (lengths[i], i))
    for lo in range(0, len(order), cfg.batch_size):
        bucket = order[lo : lo + cfg.batch_size]
        batch = Batch.from_sequences([sequences[i] for i in bucket])
        fwd = forward(batch, params, variant, attn_cfg)
        cov = fwd.state.cov.data
        for r, i in enumerate(bucket):
            window = cov[r, batch.mask[r]]
            rows[i] = window.mean(axis=0) if per_dim else window.mean()
    ids = [s.student_id for s in sequences]
    header = "sequence_id," + (
        ",".join(f"dim{j}" for j in range(rows.shape[1])) if per_dim else "cov_mean"
    )
    _write_csv(path, header, [(sid, *row) for sid, row in zip(ids, rows)])
    return rows


# ---------------------------------------------------------------------------
# aleatory stress evaluation
# ---------------------------------------------------------------------------

def inject_response_noise(
    sequences: list[StudentSequence], noise_rate: float, seed: int = 0
) -> list[StudentSequence]:
    """Flip each response with the given probability (guess/slip stand-in)."""
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigError(f"noise_rate {noise_rate} outside [0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for seq in sequences:
        its = [
            dc_replace(it, response=1 - it.response)
            if rng.random() < noise_rate else it
            for it in seq.interactions
        ]
        out.append(StudentSequence(seq.student_id, its))
    return out


@dataclass
class StressRow:
    variant: str
    auc_clean: float
    auc_noised: float

    @property
    def degradation(self) -> float:
        return self.auc_clean - self.auc_noised


def aleatory_stress_eval(
    params_by_variant: dict,
    clean: list[StudentSequence],
    noise_rate: float,
    variants: dict | None = None,
    cfg: TrainConfig | None = None,
    seed: int = 0,
    out_path=None,
) -> list[StressRow]:
    """Evaluate each trained variant on clean vs response-flipped data.

    ``params_by_variant`` maps a variant name to trained ModelParams;
    ``variants`` supplies the matching VariantConfig (named_variant lookup
    by default). Reports AUC degradation per variant.
    """
    noised = inject_response_noise(clean, noise_rate, seed)
    rows = []
    for name, params in params_by_variant.items():
        variant = (variants or {}).get(name) or VariantConfig.named_variant(name)
        run_cfg = cfg or TrainConfig(dim=params.dim)
        attn = run_cfg.attention()
        auc_clean = evaluate(params, clean, variant, attn,
                             batch_size=run_cfg.batch_size).auc
        auc_noised = evaluate(params, noised, variant, attn,
                              batch_size=run_cfg.batch_size).auc
        rows.append(StressRow(name, auc_clean, auc_noised))
        log_.info("stress %s: clean %.4f noised %.4f (drop %.4f)",
                  name, auc_clean, auc_noised, rows[-1].degradation)
    _write_csv(
        out_path,
        "variant,auc_clean,auc_noised,degradation",
        [(r.variant, r.auc_clean, r.auc_noised, r.degradation) for r in rows],
    )
    return rows


# ---------------------------------------------------------------------------
# end-to-end gradient verification
# ---------------------------------------------------------------------------

def end_to_end_gradient_check(
    seed: int = 7,
    lambda_: float = 0.1,
    dim: int = 6,
    heads: int = 2,
    epsilon: float = 1e-5,
):
    """Finite-difference check of the complete objective on a toy batch.

    Two sequences of length five, both loss branches active; returns the
    CheckReport with max relative error per parameter tensor.
    """
    from .attention import AttentionConfig
    from .data import Interaction, StudentSequence
    from .embeddings import Batch
    from .gradcheck import finite_diff_check
    from .model import forward, negate_batch, total_loss

    rng = np.random.default_rng(seed)
    num_kcs, num_questions, length = 5, 5, 5
    seqs = []
    for sid in range(2):
        its = [
            Interaction(
                int(rng.integers(1, num_questions)),
                (int(rng.integers(1, num_kcs)),),
                int(rng.integers(0, 2)),
                t,
            )
            for t in range(length)
        ]
        seqs.append(StudentSequence(sid + 1, its))
    batch = Batch.from_sequences(seqs)
    neg = negate_batch(batch)
    params = ModelParams.init(num_kcs, num_questions, dim, max_len=length + 1,
                              blocks=1, seed=seed)
    variant = VariantConfig(lambda_=lambda_)
    attn_cfg = AttentionConfig(dim=dim, heads=heads)

    def loss():
        fwd = forward(batch, params, variant, attn_cfg)
        fwd_neg = forward(neg, params, variant, attn_cfg)
        total, _ = total_loss(fwd, fwd_neg, batch.response, variant)
        return total

    return finite_diff_check(loss, params.named(), epsilon=epsilon)


# ---------------------------------------------------------------------------
# ablation table
# ---------------------------------------------------------------------------

def ablation_table(
    plan: FoldPlan,
    cfg: TrainConfig,
    lambda_: float = 0.1,
    out_path=None,
) -> list[tuple[str, float, float]]:
    """Test AUC and accuracy for the full model and each single ablation."""
    test_seqs = plan.test_sequences()
    rows = []
    for name in VARIANT_ORDER:
        variant = VariantConfig.named_variant(name, lambda_=lambda_)
        params, _ = train(plan, cfg, variant)
        report = evaluate(params, test_seqs, variant, cfg.attention(),
                          batch_size=cfg.batch_size)
        rows.append((name, report.auc, report.accuracy))
        log_.info("ablation %s: auc %.4f acc %.4f", *rows[-1])
    _write_csv(out_path, "variant,auc,accuracy", rows)
    return rows
