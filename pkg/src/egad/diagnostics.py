"""Measurements taken during and after distillation runs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import InputError


@dataclass
class MetricsRecord:
    """One optimizer step. Serialised as a single JSON line."""

    step: int
    mean_kl: float
    weighted_total: float
    feat_loss: float
    attn_loss: float
    mean_entropy: float
    weight_entropy_corr: float | None
    deep_fraction: float
    grad_variance: float
    temperature_mean: float
    epoch: int = 0
    n_tokens: int = 0
    threshold: float = 0.0
    feat_cosine: float | None = None
    attn_cosine: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, row: dict) -> "MetricsRecord":
        return cls(**row)


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    @property
    def mode(self) -> float:
        return float(self.grid[int(np.argmax(self.density))])


def grad_variance(per_token_grads) -> float:
    """Mean squared distance of per-token gradients from their mean."""
    if isinstance(per_token_grads, np.ndarray):
        g = per_token_grads
    else:
        shapes = {np.shape(x) for x in per_token_grads}
        if len(shapes) > 1:
            raise InputError(f"per-token gradients have different shapes: {sorted(shapes)}")
        g = np.asarray(per_token_grads, dtype=np.float64)
    if g.shape[0] == 0:
        raise InputError("grad_variance needs at least one gradient")
    g = g.reshape(g.shape[0], -1)
    dev = g - g.mean(axis=0)
    return float((dev * dev).sum(axis=1).mean())


def weight_entropy_correlation(weights, entropies) -> float | None:
    """Pearson correlation, or ``None`` when either input is constant."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    h = np.asarray(entropies, dtype=np.float64).reshape(-1)
    if w.size != h.size:
        raise InputError("weights and entropies differ in length")
    if w.size < 2:
        return None
    wc, hc = w - w.mean(), h - h.mean()
    den = math.sqrt(float((wc * wc).sum()) * float((hc * hc).sum()))
    if den == 0.0:
        return None
    return float(np.clip((wc * hc).sum() / den, -1.0, 1.0))


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    sd = float(samples.std(ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def entropy_kde(entropies, resolution: int = 512, max_points: int = 20000,
                bandwidth: float | None = None) -> KdeCurve:
    """Gaussian KDE on ``[min - 3h, max + 3h]``; Silverman's bandwidth unless one is given.

    The grid is refined to at least one point per bandwidth so the
    trapezoidal integral stays close to one for sharply peaked samples.
    """
    x = np.asarray(entropies, dtype=np.float64).reshape(-1)
    if x.size < 2:
        raise InputError("entropy_kde needs at least two samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise InputError("samples are constant; bandwidth is zero")
    lo, hi = x.min() - 3 * h, x.max() + 3 * h
    points = int(min(max_points, max(resolution, math.ceil((hi - lo) / h) + 1)))
    grid = np.linspace(lo, hi, points)
    density = np.zeros_like(grid)
    norm = 1.0 / (x.size * h * math.sqrt(2 * math.pi))
    for start in range(0, grid.size, 256):
        u = (grid[start:start + 256, None] - x[None, :]) / h
        density[start:start + 256] = np.exp(-0.5 * u * u).sum(axis=1) * norm
    return KdeCurve(grid=grid, density=density, bandwidth=h)


def _mean_cosine(a: np.ndarray, b: np.ndarray) -> float:
    num = (a * b).sum(axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    cos = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(cos.mean())


def cosine_similarity(a, b) -> float:
    return _mean_cosine(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def midlayer_cosine(t_hidden, s_hidden, projection, t_attn_rows, s_attn_rows,
                    deep_mask) -> tuple[float | None, float | None]:
    """Mean cosine similarity on deep-path tokens.

    Features compare teacher hidden states with projected student hidden
    states; attention compares head-averaged rows. Inputs are ``[N, ...]``
    per token. Returns ``(None, None)`` when the mask selects nothing.
    """
    mask = np.asarray(deep_mask, dtype=bool)
    if not mask.any():
        return None, None
    feat = _mean_cosine(np.asarray(t_hidden)[mask], np.asarray(s_hidden)[mask] @ projection)
    attn = _mean_cosine(np.asarray(t_attn_rows)[mask], np.asarray(s_attn_rows)[mask])
    return feat, attn


def output_discrepancy(t_logits, s_logits) -> float:
    """Mean squared L2 distance between untempered probability rows."""
    zt = np.asarray(t_logits, dtype=np.float64)
    zs = np.asarray(s_logits, dtype=np.float64)
    if zt.shape != zs.shape:
        raise InputError(f"logit shapes differ: {zt.shape} vs {zs.shape}")

    def probs(z):
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    d = probs(zt) - probs(zs)
    d = d.reshape(-1, zt.shape[-1])
    return float((d * d).sum(axis=1).mean())


def parameter_grad_variance(token_loss: Callable[[int], tuple[ad.Tensor, Sequence[ad.Tensor]]],
                            n_tokens: int) -> float:
    """Gradient variance over all parameters, one backward pass per token.

    ``token_loss(i)`` builds a fresh graph and returns the loss of token
    ``i`` together with the parameter leaves. Slow; meant for micro-batches.
    """
    grads = []
    for i in range(n_tokens):
        loss, leaves = token_loss(i)
        ad.backward(loss)
        grads.append(np.concatenate([
            (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).reshape(-1)
            for leaf in leaves]))
    return grad_variance(np.stack(grads))
