import numpy as np
import pytest

from ukt.attention import (
    AttentionConfig,
    attend,
    attention_scores,
    w2_sq_cross,
    w2_sq_diag,
)
from ukt.embeddings import GaussianSeq
from ukt.errors import ConfigError, DomainError
from ukt.gradcheck import finite_diff_check
from ukt.tensor import Tape, Tensor, backward, tsum


def w2_sq_trace_oracle(mu1, cov1, mu2, cov2):
    """General-Gaussian squared W2 via matrix square roots.

    ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}), built
    from the diagonal vectors as dense matrices. Independent of the closed
    form under test.
    """

    def sqrtm(m):
        vals, vecs = np.linalg.eigh(m)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T

    s1, s2 = np.diag(cov1), np.diag(cov2)
    root1 = sqrtm(s1)
    inner = sqrtm(root1 @ s2 @ root1)
    mean_term = float(np.sum((np.asarray(mu1) - np.asarray(mu2)) ** 2))
    return mean_term + float(np.trace(s1 + s2 - 2.0 * inner))


def _gauss(rng, d):
    return rng.normal(size=d), rng.random(d) + 0.05


def test_w2_identical_is_zero():
    mu, cov = np.ones(4), np.full(4, 2.0)
    assert float(w2_sq_diag(mu, cov, mu, cov).data) == 0.0


def test_w2_hand_value():
    out = w2_sq_diag([0.0], [1.0], [3.0], [4.0])
    assert float(out.data) == pytest.approx(10.0)  # 9 + (2-1)^2


def test_w2_rejects_nonpositive_cov():
    with pytest.raises(DomainError):
        w2_sq_diag([0.0], [0.0], [1.0], [1.0])


def test_w2_matches_trace_oracle():
    rng = np.random.default_rng(21)
    for _ in range(200):
        mu1, cov1 = _gauss(rng, 6)
        mu2, cov2 = _gauss(rng, 6)
        closed = float(w2_sq_diag(mu1, cov1, mu2, cov2).data)
        oracle = w2_sq_trace_oracle(mu1, cov1, mu2, cov2)
        assert closed == pytest.approx(oracle, abs=1e-9)


def test_w2_metric_axioms():
    rng = np.random.default_rng(22)
    for _ in range(300):
        a = _gauss(rng, 5)
        b = _gauss(rng, 5)
        c = _gauss(rng, 5)
        dab = np.sqrt(float(w2_sq_diag(a[0], a[1], b[0], b[1]).data))
        dba = np.sqrt(float(w2_sq_diag(b[0], b[1], a[0], a[1]).data))
        dac = np.sqrt(float(w2_sq_diag(a[0], a[1], c[0], c[1]).data))
        dcb = np.sqrt(float(w2_sq_diag(c[0], c[1], b[0], b[1]).data))
        daa = np.sqrt(float(w2_sq_diag(a[0], a[1], a[0], a[1]).data))
        assert dab >= 0.0
        assert dab == dba  # exact symmetry
        assert daa <= 1e-12
        assert dab <= dac + dcb + 1e-9


def test_w2_cross_matches_pairwise():
    rng = np.random.default_rng(23)
    qm, qc = rng.normal(size=(3, 4)), rng.random((3, 4)) + 0.1
    km, kc_ = rng.normal(size=(5, 4)), rng.random((5, 4)) + 0.1
    cross = w2_sq_cross(Tensor(qm), Tensor(qc), Tensor(km), Tensor(kc_)).data
    for i in range(3):
        for j in range(5):
            direct = float(w2_sq_diag(qm[i], qc[i], km[j], kc_[j]).data)
            assert cross[i, j] == pytest.approx(direct, abs=1e-9)


def _seq(mean, cov, mask=None):
    mean = np.asarray(mean, dtype=float)
    if mask is None:
        mask = np.ones(mean.shape[:-1], dtype=bool)
    return GaussianSeq(Tensor(mean), Tensor(np.asarray(cov, dtype=float)), mask)


def test_attention_scores_identical_key_is_max():
    cfg = AttentionConfig(dim=2, heads=1, scale=1.0)
    keys = _seq([[0.0, 0.0], [3.0, 3.0]], [[1.0, 1.0], [1.0, 1.0]])
    scores = attention_scores([0.0, 0.0], [1.0, 1.0], keys, cfg)
    assert scores[0] == 0.0
    assert scores[0] > scores[1]


def test_attention_scores_equidistant_equal():
    cfg = AttentionConfig(dim=1, heads=1, scale=1.0)
    keys = _seq([[1.0], [-1.0]], [[1.0], [1.0]])
    scores = attention_scores([0.0], [1.0], keys, cfg)
    assert scores[0] == scores[1]


def test_attention_scores_mask_is_neg_inf():
    cfg = AttentionConfig(dim=1, heads=1)
    keys = _seq([[1.0], [2.0]], [[1.0], [1.0]], mask=np.array([True, False]))
    scores = attention_scores([0.0], [1.0], keys, cfg)
    assert scores[1] == -np.inf


def test_attention_scores_all_masked_raises():
    cfg = AttentionConfig(dim=1, heads=1)
    keys = _seq([[1.0]], [[1.0]], mask=np.array([False]))
    with pytest.raises(DomainError):
        attention_scores([0.0], [1.0], keys, cfg)


def test_scale_preserves_argmax():
    rng = np.random.default_rng(24)
    keys = _seq(rng.normal(size=(6, 4)), rng.random((6, 4)) + 0.1)
    q_mean, q_cov = rng.normal(size=4), rng.random(4) + 0.1
    sharp = attention_scores(q_mean, q_cov, keys, AttentionConfig(dim=4, heads=1, scale=1.0))
    smooth = attention_scores(q_mean, q_cov, keys, AttentionConfig(dim=4, heads=1, scale=2.0))
    assert np.argmax(sharp) == np.argmax(smooth)


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError):
        AttentionConfig(dim=6, heads=4)


def _ones_mask(B, T):
    return np.ones((B, T), dtype=bool)


def test_attend_single_history_item_copies_value():
    rng = np.random.default_rng(25)
    cfg = AttentionConfig(dim=4, heads=2)
    mean = rng.normal(size=(1, 2, 4))
    cov = rng.random((1, 2, 4)) + 0.2
    vmean = rng.normal(size=(1, 2, 4))
    vcov = rng.random((1, 2, 4)) + 0.2
    q = _seq(mean, cov)
    out = attend(q, q, _seq(vmean, vcov), cfg)
    # position 1 attends exactly to history item 0
    assert np.allclose(out.mean.data[0, 1], vmean[0, 0])
    assert np.allclose(out.cov.data[0, 1], vcov[0, 0])


def test_attend_empty_context_neutral_prior():
    rng = np.random.default_rng(26)
    cfg = AttentionConfig(dim=4, heads=2)
    g = _seq(rng.normal(size=(2, 3, 4)), rng.random((2, 3, 4)) + 0.2)
    out = attend(g, g, g, cfg)
    assert np.all(out.mean.data[:, 0] == 0.0)
    assert np.all(out.cov.data[:, 0] == 1.0)


def test_attend_equidistant_keys_average_values():
    cfg = AttentionConfig(dim=2, heads=1)
    T = 4
    mean = np.zeros((1, T, 2))
    cov = np.ones((1, T, 2))
    vmean = np.arange(T * 2, dtype=float).reshape(1, T, 2)
    vcov = np.ones((1, T, 2)) + np.arange(T)[None, :, None]
    out = attend(_seq(mean, cov), _seq(mean, cov), _seq(vmean, vcov), cfg)
    # query at position 3 sees three identical-score keys -> arithmetic mean
    assert np.allclose(out.mean.data[0, 3], vmean[0, :3].mean(axis=0))
    assert np.allclose(out.cov.data[0, 3], vcov[0, :3].mean(axis=0))


def test_attend_hand_softmax_mixture():
    # scores (0, -1, masked) -> weights (0.7311, 0.2689)
    cfg = AttentionConfig(dim=1, heads=1, scale=1.0)
    qmean = np.array([[[0.0], [0.0], [0.0], [0.0]]])
    qcov = np.ones((1, 4, 1))
    kmean = np.array([[[0.0], [1.0], [5.0], [0.0]]])
    kcov = np.ones((1, 4, 1))
    vmean = np.array([[[10.0], [20.0], [99.0], [0.0]]])
    vcov = np.ones((1, 4, 1))
    mask = np.array([[True, True, False, True]])
    out = attend(_seq(qmean, qcov, mask), _seq(kmean, kcov, mask),
                 _seq(vmean, vcov, mask), cfg)
    w0 = np.exp(0.0) / (np.exp(0.0) + np.exp(-1.0))
    w1 = 1.0 - w0
    assert w0 == pytest.approx(0.73105857863, abs=1e-9)
    assert out.mean.data[0, 3, 0] == pytest.approx(10.0 * w0 + 20.0 * w1, abs=1e-9)


def test_attend_causality():
    rng = np.random.default_rng(27)
    cfg = AttentionConfig(dim=4, heads=2)
    B, T, d = 1, 5, 4
    q = _seq(rng.normal(size=(B, T, d)), rng.random((B, T, d)) + 0.2)
    vmean = rng.normal(size=(B, T, d))
    vcov = rng.random((B, T, d)) + 0.2
    base = attend(q, q, _seq(vmean, vcov), cfg).mean.data
    j = 2
    vmean2 = vmean.copy()
    vmean2[0, j] += 1.0
    bumped = attend(q, q, _seq(vmean2, vcov), cfg).mean.data
    assert np.allclose(base[0, : j + 1], bumped[0, : j + 1])
    assert not np.allclose(base[0, j + 1 :], bumped[0, j + 1 :])


def test_attend_positivity_preserved():
    rng = np.random.default_rng(28)
    cfg = AttentionConfig(dim=6, heads=3)
    for _ in range(50):
        g = _seq(rng.normal(size=(2, 6, 6)), rng.random((2, 6, 6)) * 3 + 1e-3)
        v = _seq(rng.normal(size=(2, 6, 6)), rng.random((2, 6, 6)) * 3 + 1e-3)
        out = attend(g, g, v, cfg)
        assert np.all(out.cov.data > 0)


def test_attend_permutation_invariant_when_scores_tie():
    cfg = AttentionConfig(dim=2, heads=1)
    T = 4
    mean = np.zeros((1, T, 2))
    cov = np.ones((1, T, 2))
    vmean = np.array([[[1.0, 0.0], [2.0, 1.0], [4.0, 3.0], [0.0, 0.0]]])
    vcov = np.ones((1, T, 2))
    out1 = attend(_seq(mean, cov), _seq(mean, cov), _seq(vmean, vcov), cfg)
    perm = vmean[:, [1, 0, 2, 3]]
    out2 = attend(_seq(mean, cov), _seq(mean, cov), _seq(perm, vcov), cfg)
    # permuting a tied history leaves the position-3 aggregate unchanged
    assert np.allclose(out1.mean.data[0, 3], out2.mean.data[0, 3])


def test_attend_dot_product_variant():
    rng = np.random.default_rng(29)
    cfg = AttentionConfig(dim=4, heads=2, scale=2.0)
    g = _seq(rng.normal(size=(1, 4, 4)), rng.random((1, 4, 4)) + 0.2)
    v = _seq(rng.normal(size=(1, 4, 4)), rng.random((1, 4, 4)) + 0.2)
    wass = attend(g, g, v, cfg, use_wasserstein=True)
    dot = attend(g, g, v, cfg, use_wasserstein=False)
    assert not np.allclose(wass.mean.data, dot.mean.data)
    assert np.all(dot.cov.data > 0)


def test_attend_gradients():
    rng = np.random.default_rng(30)
    cfg = AttentionConfig(dim=4, heads=2)
    B, T, d = 1, 4, 4
    qm = Tensor(rng.normal(size=(B, T, d)), requires_grad=True)
    qc = Tensor(rng.random((B, T, d)) + 0.3, requires_grad=True)
    vm = Tensor(rng.normal(size=(B, T, d)), requires_grad=True)
    vc = Tensor(rng.random((B, T, d)) + 0.3, requires_grad=True)
    mask = _ones_mask(B, T)
    coeff = rng.normal(size=(B, T, d))

    def loss():
        out = attend(GaussianSeq(qm, qc, mask), GaussianSeq(qm, qc, mask),
                     GaussianSeq(vm, vc, mask), cfg)
        return tsum(out.mean * coeff) + tsum(out.cov * coeff)

    report = finite_diff_check(
        loss, [("qm", qm), ("qc", qc), ("vm", vm), ("vc", vc)], epsilon=1e-5
    )
    assert report.max_rel_error < 1e-4, report.summary()


def test_w2_gradient():
    rng = np.random.default_rng(31)
    mu1 = Tensor(rng.normal(size=5), requires_grad=True)
    c1 = Tensor(rng.random(5) + 0.2, requires_grad=True)
    mu2 = Tensor(rng.normal(size=5), requires_grad=True)
    c2 = Tensor(rng.random(5) + 0.2, requires_grad=True)
    report = finite_diff_check(
        lambda: w2_sq_diag(mu1, c1, mu2, c2),
        [("mu1", mu1), ("c1", c1), ("mu2", mu2), ("c2", c2)],
        epsilon=1e-5,
    )
    assert report.max_rel_error < 1e-5, report.summary()
