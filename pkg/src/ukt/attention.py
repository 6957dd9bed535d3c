"""Self-attention over diagonal-Gaussian tokens.

Scores are negative squared 2-Wasserstein distances between the query and
key Gaussians. For diagonal covariances the distance has the closed form

    ||mu_q - mu_k||^2 + sum_i (sqrt(cov_q_i) - sqrt(cov_k_i))^2

so no matrix square roots are needed. Scores are divided by a temperature
(sqrt(dim) by default), masked to strictly earlier unmasked positions, and
softmax-normalized; value means and covariances are aggregated with the same
convex weights, which keeps covariances positive. A query with an empty
context (the first position) returns mean 0 and covariance 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import GaussianSeq
from .errors import ConfigError, DomainError
from .tensor import (
    Tensor,
    custom_op,
    dropout,
    masked_softmax,
    matmul,
    reshape,
    softmax_backward_data,
    softmax_masked_data,
    sqrt,
    square,
    transpose,
    tsum,
)


@dataclass
class AttentionConfig:
    dim: int
    heads: int = 4
    scale: float | None = None  # score divisor; sqrt(dim) when unset
    causal: bool = True

    def __post_init__(self):
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(
                f"heads ({self.heads}) must divide the model dimension ({self.dim})"
            )
        if self.scale is None:
            self.scale = float(np.sqrt(self.dim))
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if not self.causal:
            raise ConfigError("non-causal attention is not supported here")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def _check_positive(cov, name: str) -> None:
    data = cov.data if isinstance(cov, Tensor) else np.asarray(cov)
    if np.any(data <= 0):
        raise DomainError(f"{name}: covariance entries must be strictly positive")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def w2_sq_diag(mu1, cov1, mu2, cov2) -> Tensor:
    """Squared 2-Wasserstein distance between diagonal Gaussians.

    Operands are (..., d); the result drops the last axis. Differentiable
    for strictly positive covariances.
    """
    _check_positive(cov1, "w2_sq_diag")
    _check_positive(cov2, "w2_sq_diag")
    mean_term = tsum(square(_as_tensor(mu1) - _as_tensor(mu2)), axis=-1)
    dev_term = tsum(square(sqrt(cov1) - sqrt(cov2)), axis=-1)
    return mean_term + dev_term


def w2_sq_cross(q_mean, q_cov, k_mean, k_cov) -> Tensor:
    """All-pairs squared distances, (..., T, d) x (..., S, d) -> (..., T, S).

    Uses the |a|^2 + |b|^2 - 2ab expansion so the pairwise matrix is built
    from matmuls instead of a (T, S, d) intermediate. Cancellation can leave
    values a few ulp below zero; downstream softmax does not care.
    """
    _check_positive(q_cov, "w2_sq_cross")
    _check_positive(k_cov, "w2_sq_cross")
    perm = _swap_last_two(k_mean.ndim)

    def pair_term(a, b):
        a_sq = tsum(square(a), axis=-1)
        b_sq = tsum(square(b), axis=-1)
        cross = matmul(a, transpose(b, perm))
        return (
            reshape(a_sq, a_sq.shape + (1,))
            + reshape(b_sq, b_sq.shape[:-1] + (1, b_sq.shape[-1]))
            - 2.0 * cross
        )

    return pair_term(q_mean, k_mean) + pair_term(sqrt(q_cov), sqrt(k_cov))


def _swap_last_two(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def attention_scores(query_mean, query_cov, keys: GaussianSeq, cfg: AttentionConfig):
    """Scores of one full-width query against a key sequence (diagnostic path).

    Masked keys score -inf. The multi-head training path lives in
    ``attend``; this keeps the single-query contract testable in isolation.
    """
    q_mean = query_mean if isinstance(query_mean, Tensor) else Tensor(query_mean)
    q_cov = query_cov if isinstance(query_cov, Tensor) else Tensor(query_cov)
    key_mask = keys.mask.reshape(-1)
    if not key_mask.any():
        raise DomainError("attention_scores: every key is masked")
    dist = w2_sq_diag(q_mean, q_cov, keys.mean, keys.cov)
    scores = (-1.0 / cfg.scale) * dist
    return np.where(key_mask, scores.data, -np.inf)


def _fused_w2_weights(q_mean, q_cov, k_mean, k_cov, allowed, scale) -> Tensor:
    """Distance scores + masked softmax as one tape node.

    Composing this from primitive ops records ~15 (B, H, T, T)
    intermediates per layer; the fused backward needs four matmuls and a
    couple of broadcast passes, which is what makes desk-scale training
    affordable.
    """
    qm, qc, km, kc_ = q_mean.data, q_cov.data, k_mean.data, k_cov.data
    u, v = np.sqrt(qc), np.sqrt(kc_)
    dist = qm @ km.swapaxes(-1, -2)
    dist += u @ v.swapaxes(-1, -2)
    dist *= -2.0
    dist += (qm * qm).sum(axis=-1, keepdims=True) + qc.sum(axis=-1, keepdims=True)
    dist += ((km * km).sum(axis=-1) + kc_.sum(axis=-1))[..., None, :]
    weights = softmax_masked_data(dist * (-1.0 / scale), allowed)

    def backward_fn(g):
        g_dist = softmax_backward_data(weights, g) * (-1.0 / scale)
        g_dist_t = g_dist.swapaxes(-1, -2)
        rs = g_dist.sum(axis=-1, keepdims=True)   # per query
        cs = g_dist.sum(axis=-2)[..., None]       # per key
        g_qm = 2.0 * (rs * qm - g_dist @ km)
        g_km = 2.0 * (cs * km - g_dist_t @ qm)
        g_qc = rs - (g_dist @ v) / u
        g_kc = cs - (g_dist_t @ u) / v
        return g_qm, g_qc, g_km, g_kc

    return custom_op(weights, (q_mean, q_cov, k_mean, k_cov), backward_fn)


def _fused_dot_weights(q_mean, k_mean, allowed, scale) -> Tensor:
    """Scaled dot-product scores + masked softmax as one tape node."""
    qm, km = q_mean.data, k_mean.data
    weights = softmax_masked_data((qm @ km.swapaxes(-1, -2)) / scale, allowed)

    def backward_fn(g):
        g_scores = softmax_backward_data(weights, g) / scale
        return g_scores @ km, g_scores.swapaxes(-1, -2) @ qm

    return custom_op(weights, (q_mean, k_mean), backward_fn)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, T, d = x.shape
    return transpose(reshape(x, (B, T, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, hd = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, T, H * hd))


def attend(
    queries: GaussianSeq,
    keys: GaussianSeq,
    values: GaussianSeq,
    cfg: AttentionConfig,
    use_wasserstein: bool = True,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> GaussianSeq:
    """Aggregate value Gaussians for every position over its strict past.

    Query t sees keys 1..t-1 only. With ``use_wasserstein=False`` scores fall
    back to a scaled dot product of the means; the covariance channel is
    still aggregated with the resulting weights.
    """
    B, T, d = queries.mean.shape
    q_mean = _split_heads(queries.mean, cfg.heads)
    k_mean = _split_heads(keys.mean, cfg.heads)
    v_mean = _split_heads(values.mean, cfg.heads)
    v_cov = _split_heads(values.cov, cfg.heads)

    past = np.tril(np.ones((T, T), dtype=bool), k=-1)
    allowed = past[None, None, :, :] & keys.mask[:, None, None, :]
    if use_wasserstein:
        q_cov = _split_heads(queries.cov, cfg.heads)
        k_cov = _split_heads(keys.cov, cfg.heads)
        weights = _fused_w2_weights(q_mean, q_cov, k_mean, k_cov, allowed, cfg.scale)
    else:
        weights = _fused_dot_weights(q_mean, k_mean, allowed, cfg.scale)
    if dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("attention dropout needs an rng")
        weights = dropout(weights, dropout_rate, rng)

    out_mean = _merge_heads(matmul(weights, v_mean))
    out_cov = _merge_heads(matmul(weights, v_cov))

    # empty context (position 1): neutral prior, mean 0 and covariance 1
    empty = ~allowed.any(axis=(1, 3))  # (B, T)
    if empty.any():
        out_cov = out_cov + Tensor(empty[:, :, None].astype(float))
    return GaussianSeq(mean=out_mean, cov=out_cov, mask=queries.mask)
