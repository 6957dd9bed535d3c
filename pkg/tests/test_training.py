import numpy as np
import pytest

from ukt.data import DatasetBundle, Interaction, StudentSequence, split_folds
from ukt.errors import DataError, NumericError
from ukt.model import ModelParams, VariantConfig
from ukt.synth import SynthSpec, generate_students
from ukt.tensor import Tensor
from ukt.training import (
    Adam,
    EvalReport,
    TrainConfig,
    accuracy,
    auc,
    evaluate,
    fit,
    train,
    train_overfit,
)


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------

def auc_pairwise_oracle(scores, labels):
    """O(n^2) comparison of every positive-negative pair; ties count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_auc_perfect_ranking():
    assert auc([0.9, 0.1], [1, 0]) == 1.0


def test_auc_ties_are_half():
    assert auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_single_class_raises():
    with pytest.raises(DataError):
        auc([0.2, 0.8], [1, 1])


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(40)
    for trial in range(100):
        n = int(rng.integers(5, 60))
        scores = rng.choice([0.1, 0.25, 0.5, 0.8], size=n) if trial % 3 == 0 \
            else rng.random(n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        fast = auc(scores, labels)
        slow = auc_pairwise_oracle(scores, labels)
        assert fast == pytest.approx(slow, abs=1e-9)


def test_auc_monotone_transform_invariant():
    rng = np.random.default_rng(41)
    scores = rng.random(200)
    labels = rng.integers(0, 2, size=200)
    a = auc(scores, labels)
    b = auc(np.exp(3.0 * scores) + 7.0, labels)
    assert a == pytest.approx(b, abs=1e-12)


def test_accuracy():
    assert accuracy([0.9, 0.2, 0.6], [1, 0, 0]) == pytest.approx(2 / 3)
    assert accuracy([0.9, 0.8], [1, 1]) == 1.0


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_is_identity():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([("p", p)], learning_rate=0.1)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adam_descends_quadratic():
    p = Tensor(np.array([5.0]), requires_grad=True)
    opt = Adam([("p", p)], learning_rate=0.1)
    for _ in range(200):
        p.grad = 2.0 * p.data
        opt.step()
        opt.zero_grad()
    assert abs(p.data[0]) < 1e-2


# ---------------------------------------------------------------------------
# evaluate / fit
# ---------------------------------------------------------------------------

def _tiny_bundle(seed=0, students=12, kcs=6, lo=4, hi=10):
    spec = SynthSpec(num_students=students, num_kcs=kcs, seq_len=(lo, hi),
                     ability_std=3.0, seed=seed)
    return generate_students(spec)


def _tiny_cfg(**kw):
    base = dict(max_epochs=3, patience=2, dim=8, heads=2, batch_size=8,
                max_len=16, seed=0, dropout=0.0)
    base.update(kw)
    return TrainConfig(**base)


def test_evaluate_constant_predictor_is_half():
    bundle = _tiny_bundle()
    cfg = _tiny_cfg()
    params = ModelParams.init(bundle.num_kcs, bundle.num_questions, cfg.dim,
                              cfg.max_len, seed=0)
    params.predict_w.data[:] = 0.0
    params.predict_b.data[:] = 0.3
    report = evaluate(params, bundle.sequences, VariantConfig(), cfg.attention())
    assert report.auc == 0.5


def test_evaluate_order_independent():
    bundle = _tiny_bundle(seed=1)
    cfg = _tiny_cfg()
    params = ModelParams.init(bundle.num_kcs, bundle.num_questions, cfg.dim,
                              cfg.max_len, seed=1)
    a = evaluate(params, bundle.sequences, VariantConfig(), cfg.attention())
    b = evaluate(params, bundle.sequences[::-1], VariantConfig(), cfg.attention())
    assert a.auc == pytest.approx(b.auc, abs=1e-12)
    assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)


def test_fit_deterministic_loss_trace():
    bundle = _tiny_bundle(seed=2)
    cfg = _tiny_cfg(seed=5)
    seqs = bundle.sequences
    _, r1 = fit(seqs, seqs, bundle.num_kcs, bundle.num_questions, cfg)
    _, r2 = fit(seqs, seqs, bundle.num_kcs, bundle.num_questions, cfg)
    assert r1.loss_trace == r2.loss_trace
    assert r1.val_auc_trace == r2.val_auc_trace


def test_fit_lambda_changes_loss_trace():
    bundle = _tiny_bundle(seed=3)
    seqs = bundle.sequences
    cfg = _tiny_cfg(seed=6)
    _, base = fit(seqs, seqs, bundle.num_kcs, bundle.num_questions, cfg,
                  VariantConfig(lambda_=0.0))
    _, with_cl = fit(seqs, seqs, bundle.num_kcs, bundle.num_questions, cfg,
                     VariantConfig(lambda_=0.05))
    assert base.loss_trace != with_cl.loss_trace


def test_fit_returns_best_checkpoint():
    bundle = _tiny_bundle(seed=4)
    cfg = _tiny_cfg(max_epochs=6, seed=7)
    seqs = bundle.sequences
    params, report = fit(seqs, seqs, bundle.num_kcs, bundle.num_questions, cfg)
    assert report.auc == max(report.val_auc_trace)
    check = evaluate(params, seqs, VariantConfig(), cfg.attention())
    assert check.auc == pytest.approx(report.auc, abs=1e-12)


def test_fit_early_stops_on_patience():
    bundle = _tiny_bundle(seed=5)
    cfg = _tiny_cfg(max_epochs=50, patience=1, learning_rate=1e-5, seed=8)
    _, report = fit(bundle.sequences, bundle.sequences, bundle.num_kcs,
                    bundle.num_questions, cfg)
    assert len(report.loss_trace) < 50


def test_fit_divergence_detected():
    bundle = _tiny_bundle(seed=6)
    cfg = _tiny_cfg(seed=9)
    cfg.learning_rate = 1e28  # past validation; guarantees overflow
    with pytest.raises(NumericError, match="epoch"):
        fit(bundle.sequences, bundle.sequences, bundle.num_kcs,
            bundle.num_questions, cfg)


def test_fit_metrics_file(tmp_path):
    bundle = _tiny_bundle(seed=7)
    cfg = _tiny_cfg(seed=10)
    path = tmp_path / "metrics.csv"
    fit(bundle.sequences, bundle.sequences, bundle.num_kcs,
        bundle.num_questions, cfg, metrics_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_auc,val_acc"
    assert len(lines) == 1 + cfg.max_epochs


def test_train_uses_fold_plan():
    bundle = _tiny_bundle(seed=8, students=20)
    plan = split_folds(bundle, test_fraction=0.2, k=4, seed=0)
    cfg = _tiny_cfg(max_epochs=2, seed=11)
    params, report = train(plan, cfg)
    assert np.isfinite(report.auc)
    assert len(report.loss_trace) >= 1


def test_train_overfit_improves_auc():
    bundle = _tiny_bundle(seed=9, students=16, kcs=5, lo=8, hi=14)
    cfg = _tiny_cfg(max_epochs=25, patience=25, dim=8, seed=12,
                    learning_rate=1e-3)
    _, report = train_overfit(bundle, cfg, target_auc=0.95)
    assert report.val_auc_trace[-1] > report.val_auc_trace[0]
    assert report.auc > 0.6
