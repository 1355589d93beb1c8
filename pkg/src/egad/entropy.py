"""Teacher-entropy signal and the per-token quantities derived from it.

All outputs here are plain arrays: they are computed from frozen teacher
outputs and act as constants in the student's objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class CurriculumClock:
    step: int
    switch_step: int

    def __post_init__(self):
        if self.step < 0:
            raise ConfigError("step must be non-negative")
        if self.switch_step <= 0:
            raise ConfigError("switch_step must be positive")

    @property
    def phase(self) -> str:
        return "early" if self.step < self.switch_step else "late"


@dataclass(frozen=True)
class TemperatureBounds:
    t_min: float = 1.0
    t_max: float = 5.0

    def __post_init__(self):
        if not (self.t_min > 0 and self.t_max > 0):
            raise ConfigError(f"temperature bounds must be positive (t_min={self.t_min}, t_max={self.t_max})")
        if self.t_min > self.t_max:
            raise ConfigError(f"t_min={self.t_min} exceeds t_max={self.t_max}")


@dataclass
class EntropyProfile:
    entropies: np.ndarray
    weights: np.ndarray
    temperatures: np.ndarray
    deep_mask: np.ndarray
    threshold: float


def token_entropy(probs, tol: float = 1e-9) -> np.ndarray:
    """Shannon entropy in nats of each probability row (``0 log 0 = 0``)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if (p < 0).any():
        raise InputError("probabilities must be non-negative")
    if np.abs(p.sum(axis=-1) - 1.0).max(initial=0.0) > tol:
        raise InputError("probability rows must sum to one")
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -plogp.sum(axis=-1)
    # a one-hot row can come out as -0.0
    return np.maximum(h, 0.0)


def entropy_from_logits(logits) -> np.ndarray:
    """Entropy of ``softmax(logits)`` per row, computed via log-softmax."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    return np.maximum(-(p * logp).sum(axis=-1), 0.0)


def curriculum_weights(entropies, clock: CurriculumClock) -> np.ndarray:
    h = np.asarray(entropies, dtype=np.float64)
    if (h < 0).any():
        raise InputError("entropies must be non-negative")
    return sigmoid(1.0 - h) if clock.phase == "early" else sigmoid(h)


def adaptive_temperatures(entropies, bounds: TemperatureBounds) -> np.ndarray:
    h = np.asarray(entropies, dtype=np.float64)
    if (h < 0).any():
        raise InputError("entropies must be non-negative")
    return bounds.t_min + (bounds.t_max - bounds.t_min) * sigmoid(h)


def threshold_rank(q: float, n: int) -> int:
    # small slack so q=1/3 stored as 0.333... still gives floor(n/3)
    return min(n - 1, int(math.floor(q * n + 1e-9)))


def entropy_threshold(entropies, q: float = 1.0 / 3.0) -> float:
    """The entry of rank ``floor(q * N)`` in the ascending order of entropies."""
    h = np.asarray(entropies, dtype=np.float64).reshape(-1)
    if h.size == 0:
        raise InputError("entropy_threshold needs at least one token")
    if not 0 <= q < 1:
        raise ConfigError(f"quantile q must lie in [0, 1), got {q}")
    k = threshold_rank(q, h.size)
    return float(np.partition(h, k)[k])


def deep_path_mask(entropies, threshold: float) -> np.ndarray:
    return np.asarray(entropies, dtype=np.float64) >= threshold


def ranked_deep_mask(entropies, q: float = 1.0 / 3.0) -> np.ndarray:
    """Deep-path gate used in training: the ``floor(q * N)`` lowest-entropy tokens are shallow.

    Agrees with ``entropy >= threshold`` except among tokens tied exactly at
    the threshold, where the earlier positions go shallow so the deep count
    is always ``N - floor(q * N)``.
    """
    h = np.asarray(entropies, dtype=np.float64).reshape(-1)
    k = threshold_rank(q, h.size)
    mask = np.ones(h.size, dtype=bool)
    mask[np.argsort(h, kind="stable")[:k]] = False
    return mask


def entropy_profile(entropies, clock: CurriculumClock, bounds: TemperatureBounds,
                    q: float = 1.0 / 3.0) -> EntropyProfile:
    h = np.asarray(entropies, dtype=np.float64)
    threshold = entropy_threshold(h, q)
    return EntropyProfile(
        entropies=h,
        weights=curriculum_weights(h, clock),
        temperatures=adaptive_temperatures(h, bounds),
        deep_mask=ranked_deep_mask(h, q),
        threshold=threshold,
    )
