"""Distillation loss terms and their per-token combination.

Teacher-side inputs are plain arrays (constants); student-side inputs are
graph tensors so every term can be differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .entropy import EntropyProfile
from .errors import DimensionError, DomainError, InputError


@dataclass
class FeatureProjection:
    """Linear map from student hidden width to teacher hidden width."""

    matrix: Tensor

    @classmethod
    def init(cls, d_student: int, d_teacher: int, seed: int = 0) -> "FeatureProjection":
        rng = np.random.default_rng(seed)
        return cls(Tensor(rng.normal(0.0, 0.02, size=(d_student, d_teacher)), requires_grad=True))

    def __call__(self, phi_s) -> Tensor:
        return ad.matmul(ad.as_tensor(phi_s), self.matrix)


@dataclass
class LossBreakdown:
    per_token_kl: np.ndarray
    per_token_feat: np.ndarray
    per_token_attn: np.ndarray
    per_token_total: np.ndarray
    weighted_total: float


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def kl_divergence(p_t, p_s) -> float | np.ndarray:
    """KL(p_t || p_s) in nats per row; ``inf`` where p_s misses p_t's support."""
    p = np.asarray(p_t, dtype=np.float64)
    q = np.asarray(p_s, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    support = p > 0
    violated = (support & (q <= 0)).any(axis=-1)
    safe_p = np.where(support, p, 1.0)
    safe_q = np.where(q > 0, q, 1.0)
    terms = np.where(support, p * (np.log(safe_p) - np.log(safe_q)), 0.0)
    kl = np.where(violated, np.inf, np.maximum(terms.sum(axis=-1), 0.0))
    return float(kl) if p.ndim == 1 else kl


def kl_from_logits(z_t, z_s) -> np.ndarray:
    """Untempered per-row KL(softmax(z_t) || softmax(z_s)) on raw arrays."""
    lt, ls = _log_softmax_np(np.asarray(z_t, float)), _log_softmax_np(np.asarray(z_s, float))
    return np.maximum((np.exp(lt) * (lt - ls)).sum(axis=-1), 0.0)


def _inverse_temperature(temperature, rows_shape: tuple[int, ...]) -> np.ndarray:
    t = np.asarray(temperature, dtype=np.float64)
    if (t <= 0).any():
        raise DomainError("temperature must be positive")
    if t.ndim == 0:
        return np.full(rows_shape + (1,), 1.0 / float(t))
    if t.shape != rows_shape:
        raise DimensionError(f"temperature shape {t.shape} does not match rows {rows_shape}")
    return (1.0 / t)[..., None]


def tempered_kl(z_t, z_s, temperature) -> Tensor:
    """KL(softmax(z_t / T) || softmax(z_s / T)) per row, differentiable in ``z_s``.

    ``temperature`` is a scalar or one value per row. No T**2 rescaling.
    """
    z_s = ad.as_tensor(z_s)
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.shape != z_s.shape:
        raise DimensionError(f"logit shapes differ: {z_t.shape} vs {z_s.shape}")
    inv_t = _inverse_temperature(temperature, z_t.shape[:-1])
    log_p = _log_softmax_np(z_t * inv_t)
    p = np.exp(log_p)
    log_q = ad.log_softmax(ad.mul(z_s, inv_t))
    cross = ad.tsum(ad.mul(log_q, -p), axis=-1)
    return ad.add(cross, (p * log_p).sum(axis=-1))


def feature_loss(phi_t, phi_s, proj: FeatureProjection) -> Tensor:
    """``||phi_t - proj(phi_s)||^2 / d_teacher`` per row."""
    phi_t = np.asarray(phi_t, dtype=np.float64)
    projected = proj(phi_s)
    if projected.shape != phi_t.shape:
        raise DimensionError(f"projected student features {projected.shape} vs teacher {phi_t.shape}")
    diff = ad.sub(projected, phi_t)
    return ad.scale(ad.tsum(ad.mul(diff, diff), axis=-1), 1.0 / phi_t.shape[-1])


def attention_row_distance(rows_t, rows_s) -> Tensor:
    """Squared L2 distance between head-averaged rows, divided by their length."""
    rows_t = np.asarray(rows_t, dtype=np.float64)
    rows_s = ad.as_tensor(rows_s)
    if rows_t.shape[-1] != rows_s.shape[-1]:
        raise InputError(f"sequence lengths differ: {rows_t.shape[-1]} vs {rows_s.shape[-1]}")
    diff = ad.sub(rows_s, rows_t)
    return ad.scale(ad.tsum(ad.mul(diff, diff), axis=-1), 1.0 / rows_t.shape[-1])


def attention_loss(attn_t, attn_s) -> Tensor:
    """Compare attention rows ``[..., heads, seq]`` after averaging over heads.

    Head counts may differ between the two inputs.
    """
    attn_t = np.asarray(attn_t, dtype=np.float64)
    attn_s = ad.as_tensor(attn_s)
    if attn_t.shape[-1] != attn_s.shape[-1]:
        raise InputError(f"sequence lengths differ: {attn_t.shape[-1]} vs {attn_s.shape[-1]}")
    return attention_row_distance(attn_t.mean(axis=-2), ad.mean(attn_s, axis=-2))


def token_loss(kl_i, feat_i, attn_i, deep, lam: float):
    """Logits-only loss on the shallow path, plus ``lam * (feat + attn)`` on the deep path."""
    if lam < 0:
        raise InputError("lambda must be non-negative")
    deep = np.asarray(deep, dtype=bool)
    out = np.where(deep, np.asarray(kl_i) + lam * (np.asarray(feat_i) + np.asarray(attn_i)), kl_i)
    return float(out) if out.ndim == 0 else out


def egad_total(weights, token_losses, reduction: str = "mean") -> Tensor:
    """``sum_i w_i L_i``, divided by the token count for ``reduction='mean'``."""
    losses = ad.as_tensor(token_losses)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != losses.shape:
        raise InputError(f"weights {w.shape} and losses {losses.shape} differ in length")
    total = ad.tsum(ad.mul(losses, w))
    if reduction == "mean":
        return ad.scale(total, 1.0 / max(w.size, 1))
    if reduction == "sum":
        return total
    raise InputError(f"unknown reduction {reduction!r}")


def egad_objective(t_logits: np.ndarray, s_logits: Tensor, profile: EntropyProfile, *,
                   lam: float = 0.5, reduction: str = "mean", compensate_t_squared: bool = False,
                   t_hidden: np.ndarray | None = None, s_hidden: Tensor | None = None,
                   t_attn_rows: np.ndarray | None = None, s_attn_rows: Tensor | None = None,
                   proj: FeatureProjection | None = None) -> tuple[Tensor, LossBreakdown]:
    """Full per-batch objective over ``N`` flattened tokens.

    ``t_hidden``/``s_hidden`` are ``[N, d]`` midpoint hidden states and
    ``*_attn_rows`` are ``[N, seq]`` head-averaged attention rows. Feature and
    attention terms are evaluated only on rows where ``profile.deep_mask``
    holds; when ``lam == 0`` or no deep inputs are given they are skipped.
    """
    n = t_logits.shape[0]
    kl = tempered_kl(t_logits, s_logits, profile.temperatures)
    if compensate_t_squared:
        kl = ad.mul(kl, profile.temperatures ** 2)
    w = profile.weights
    total = ad.tsum(ad.mul(kl, w))

    feat = np.zeros(n)
    attn = np.zeros(n)
    deep_idx = np.flatnonzero(profile.deep_mask)
    use_deep = lam > 0 and deep_idx.size > 0 and s_hidden is not None
    if use_deep:
        deep_terms = feature_loss(t_hidden[deep_idx], ad.take_rows(s_hidden, deep_idx), proj)
        feat[deep_idx] = deep_terms.data
        a_terms = attention_row_distance(t_attn_rows[deep_idx], ad.take_rows(s_attn_rows, deep_idx))
        attn[deep_idx] = a_terms.data
        deep_total = ad.tsum(ad.mul(ad.add(deep_terms, a_terms), lam * w[deep_idx]))
        total = ad.add(total, deep_total)

    if reduction == "mean":
        total = ad.scale(total, 1.0 / n)
    elif reduction != "sum":
        raise InputError(f"unknown reduction {reduction!r}")

    per_token = kl.data + (lam * (feat + attn) if use_deep else 0.0)
    breakdown = LossBreakdown(per_token_kl=kl.data.copy(), per_token_feat=feat, per_token_attn=attn,
                              per_token_total=per_token, weighted_total=total.item())
    return total, breakdown


