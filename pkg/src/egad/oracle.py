"""Brute-force reference implementations.

Nothing here imports the fast paths. Arithmetic is done in mpmath at 50
significant digits (or with exactly rounded ``math.fsum``) so results can be
used as ground truth at 1e-12 and tighter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import OracleError

_DPS = 50


@dataclass
class HighPrecisionRow:
    """A row of reals whose reductions are exactly rounded."""

    values: Sequence[float]

    def sum(self) -> float:
        return math.fsum(self.values)

    def dot(self, other: Sequence[float]) -> float:
        with mpmath.workdps(_DPS):
            return float(mpmath.fsum(mpmath.mpf(a) * mpmath.mpf(b) for a, b in zip(self.values, other)))


def finite_difference_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5,
                           coords: Sequence[int] | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``coords`` restricts the estimate to a subset of flat indices; the other
    entries of the result are left at zero.
    """
    if not h > 0:
        raise OracleError("step must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for j in (range(flat.size) if coords is None else coords):
        orig = flat[j]
        flat[j] = orig + h
        fp = f(x)
        flat[j] = orig - h
        fm = f(x)
        flat[j] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise OracleError(f"non-finite function value near coordinate {j}")
        grad[j] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)


def _check_distribution(row: Sequence[float], tol: float = 1e-9) -> list:
    vals = [mpmath.mpf(float(v)) for v in row]
    if any(v < 0 for v in vals):
        raise OracleError("negative probability")
    if abs(mpmath.fsum(vals) - 1) > tol:
        raise OracleError("row does not sum to one")
    return vals


def _softmax_mp(logits: Sequence[float], temperature) -> list:
    t = mpmath.mpf(temperature)
    zs = [mpmath.mpf(float(z)) / t for z in logits]
    m = max(zs)
    es = [mpmath.exp(z - m) for z in zs]
    total = mpmath.fsum(es)
    return [e / total for e in es]


def _entropy_mp(p) -> mpmath.mpf:
    return -mpmath.fsum(v * mpmath.log(v) for v in p if v > 0)


def _kl_mp(p, q) -> mpmath.mpf:
    terms = []
    for a, b in zip(p, q):
        if a == 0:
            continue
        if b == 0:
            return mpmath.inf
        terms.append(a * (mpmath.log(a) - mpmath.log(b)))
    return mpmath.fsum(terms)


def reference_entropy_kl(t_row: Sequence[float], s_row: Sequence[float],
                         temperature: float | None = None) -> tuple[float, float]:
    """Teacher entropy and KL(teacher || student) for one token.

    With ``temperature=None`` the rows are probability vectors. Otherwise they
    are logits, and both are softened as ``softmax(z / temperature)`` first.
    """
    if len(t_row) != len(s_row):
        raise OracleError("rows have different lengths")
    with mpmath.workdps(_DPS):
        if temperature is None:
            p, q = _check_distribution(t_row), _check_distribution(s_row)
        else:
            if not temperature > 0:
                raise OracleError("temperature must be positive")
            p, q = _softmax_mp(t_row, temperature), _softmax_mp(s_row, temperature)
        return float(_entropy_mp(p)), float(_kl_mp(p, q))


def reference_softmax(logits: Sequence[float], temperature: float = 1.0) -> list[float]:
    with mpmath.workdps(_DPS):
        return [float(v) for v in _softmax_mp(logits, temperature)]


def reference_sigmoid(x: float) -> float:
    with mpmath.workdps(_DPS):
        return float(1 / (1 + mpmath.exp(-mpmath.mpf(x))))


def reference_curriculum_weight(entropy: float, early: bool) -> float:
    with mpmath.workdps(_DPS):
        h = mpmath.mpf(entropy)
        arg = 1 - h if early else h
        return float(1 / (1 + mpmath.exp(-arg)))


def reference_temperature(entropy: float, t_min: float, t_max: float) -> float:
    with mpmath.workdps(_DPS):
        sig = 1 / (1 + mpmath.exp(-mpmath.mpf(entropy)))
        return float(mpmath.mpf(t_min) + (mpmath.mpf(t_max) - mpmath.mpf(t_min)) * sig)


def quantile_rank(q: float, n: int) -> int:
    """floor(q * n) with q read as the nearest small-denominator fraction."""
    return math.floor(Fraction(q).limit_denominator(10**6) * n)


def reference_quantile(values: Sequence[float], q: float) -> float:
    if len(values) == 0:
        raise OracleError("quantile of an empty list")
    if not 0 <= q < 1:
        raise OracleError("q must lie in [0, 1)")
    ordered = sorted(float(v) for v in values)
    return ordered[quantile_rank(q, len(ordered))]


def reference_adamw(w0: float, grads: Sequence[float], lr: float, weight_decay: float,
                    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> list[float]:
    """Scalar AdamW trajectory ``[w0, w1, ..., wK]`` evaluated literally."""
    w, m, v = float(w0), 0.0, 0.0
    out = [w]
    for k, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** k)
        v_hat = v / (1 - beta2 ** k)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps) - lr * weight_decay * w
        out.append(w)
    return out


def reference_matmul(a: Sequence[Sequence[float]], b: Sequence[Sequence[float]]) -> list[list[float]]:
    if len(a[0]) != len(b):
        raise OracleError("inner dimensions differ")
    return [[math.fsum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))]
            for i in range(len(a))]
