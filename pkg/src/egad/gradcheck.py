"""Finite-difference validation of every differentiable primitive and loss.

Each case reduces the op's output to a scalar with a fixed random
weighting, differentiates it with :func:`autodiff.backward`, and compares
against central differences from :mod:`egad.oracle`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .entropy import CurriculumClock, TemperatureBounds, entropy_profile, entropy_from_logits
from .losses import FeatureProjection, attention_loss, egad_objective, feature_loss, tempered_kl
from .model import ModelConfig, forward, init_params, midpoint_layer
from .oracle import finite_difference_grad

FD_STEP = 1e-5
TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    cases: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<18} cases={self.cases:<4d} max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e}"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a - b| / max(max|a|, max|b|)``; 0 when both vanish."""
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    return 0.0 if scale == 0 else float(np.abs(a - b).max() / scale)


def check_function(fn: Callable[..., ad.Tensor], inputs: list[np.ndarray], wrt: list[int] | None = None,
                   h: float = FD_STEP, coords: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Relative error between autodiff and finite differences.

    The checked entries of all ``wrt`` inputs are pooled into one vector, so
    the error is measured against the scale of the whole gradient (individual
    tensors can have analytically zero gradients).
    """
    rng = rng or np.random.default_rng(0)
    wrt = list(range(len(inputs))) if wrt is None else wrt
    leaves = [ad.Tensor(x.copy(), requires_grad=i in wrt) for i, x in enumerate(inputs)]
    out = fn(*leaves)
    weights = rng.normal(size=out.shape)

    def scalar(*arrays):
        with ad.no_grad():
            return float((fn(*[ad.Tensor(a) for a in arrays]).data * weights).sum())

    loss = ad.tsum(ad.mul(out, weights))
    ad.backward(loss)
    autos, fds = [], []
    for i in wrt:
        def f(x, i=i):
            arrays = [a if j != i else x for j, a in enumerate(inputs)]
            return scalar(*arrays)
        sel = None
        if coords is not None and inputs[i].size > coords:
            sel = rng.choice(inputs[i].size, size=coords, replace=False)
        fd = finite_difference_grad(f, inputs[i], h=h, coords=sel)
        auto = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(inputs[i])
        if sel is not None:
            fd, auto = fd.reshape(-1)[sel], auto.reshape(-1)[sel]
        autos.append(auto.reshape(-1))
        fds.append(fd.reshape(-1))
    return relative_error(np.concatenate(autos), np.concatenate(fds))


def _uniform(rng, shape, mag=10.0):
    return rng.uniform(-mag, mag, size=shape)


def _away_from_zero(rng, shape, mag=10.0):
    x = rng.uniform(0.1, mag, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, Callable[[], list[np.ndarray]]]]:
    """name -> (op, input factory)."""
    causal = np.triu(np.ones((4, 4), dtype=bool), k=1)
    ids = np.array([[0, 2, 1], [3, 3, 0]])
    rows = np.array([2, 0, 2, 1])
    return {
        "add": (ad.add, lambda: [_uniform(rng, (3, 4)), _uniform(rng, (4,))]),
        "sub": (ad.sub, lambda: [_uniform(rng, (3, 4)), _uniform(rng, (3, 1))]),
        "mul": (ad.mul, lambda: [_uniform(rng, (3, 4)), _uniform(rng, (3, 4))]),
        "scale": (lambda a: ad.scale(a, 2.5), lambda: [_uniform(rng, (5,))]),
        "neg": (ad.neg, lambda: [_uniform(rng, (2, 3))]),
        "exp": (ad.exp, lambda: [_uniform(rng, (2, 3))]),
        "log": (ad.log, lambda: [rng.uniform(0.5, 10.0, size=(2, 3))]),
        "relu": (ad.relu, lambda: [_away_from_zero(rng, (3, 3))]),
        "gelu": (ad.gelu, lambda: [_uniform(rng, (3, 3))]),
        "sum": (lambda a: ad.tsum(a, axis=1), lambda: [_uniform(rng, (3, 4))]),
        "mean": (lambda a: ad.mean(a, axis=0, keepdims=True), lambda: [_uniform(rng, (3, 4))]),
        "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), lambda: [_uniform(rng, (2, 3, 4))]),
        "reshape": (lambda a: ad.reshape(a, (4, 3)), lambda: [_uniform(rng, (2, 6))]),
        "matmul": (ad.matmul, lambda: [_uniform(rng, (3, 4)), _uniform(rng, (4, 2))]),
        "matmul_batched": (ad.matmul, lambda: [_uniform(rng, (2, 3, 4)), _uniform(rng, (4, 5))]),
        "matmul_bmm": (ad.matmul, lambda: [_uniform(rng, (2, 3, 4)), _uniform(rng, (2, 4, 3))]),
        "embedding": (lambda t: ad.embedding(t, ids), lambda: [_uniform(rng, (4, 3))]),
        "take_rows": (lambda t: ad.take_rows(t, rows), lambda: [_uniform(rng, (3, 5))]),
        "layer_norm": (ad.layer_norm, lambda: [_uniform(rng, (3, 6)), _uniform(rng, (6,), 2.0),
                                                _uniform(rng, (6,), 2.0)]),
        # the fill value is a huge constant, so probe it through the softmax it feeds
        "masked_fill": (lambda a: ad.softmax(ad.masked_fill(a, causal)), lambda: [_uniform(rng, (2, 4, 4))]),
        "softmax": (lambda a: ad.softmax(a, temperature=2.0), lambda: [_uniform(rng, (3, 5))]),
        "log_softmax": (ad.log_softmax, lambda: [_uniform(rng, (3, 5))]),
        "concat": (lambda a, b: ad.concat([a, b], axis=-1), lambda: [_uniform(rng, (2, 3)), _uniform(rng, (2, 2))]),
        "split": (lambda a: ad.concat(ad.split(a, [2, 3], axis=-1)[::-1], axis=-1),
                  lambda: [_uniform(rng, (3, 5))]),
    }


def check_primitives(n_cases: int = 5, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (op, make) in primitive_cases(rng).items():
        worst = max(check_function(op, make(), rng=rng) for _ in range(n_cases))
        results.append(CheckResult(name, n_cases, worst, TOLERANCE))
    return results


def check_tempered_kl(n_cases: int = 100, seed: int = 1) -> CheckResult:
    """Student-logit gradient of the tempered KL; tolerance 1e-6."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    temps = (1.0, 3.0, 5.0)
    for k in range(n_cases):
        v = int(rng.integers(2, 9))
        z_t, z_s = rng.uniform(-5, 5, size=v), rng.uniform(-5, 5, size=v)
        t = temps[k % 3]
        worst = max(worst, check_function(lambda zs: tempered_kl(z_t, zs, t), [z_s], rng=rng))
    return CheckResult("tempered_kl", n_cases, worst, 1e-6)


def check_feature_loss(n_cases: int = 100, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        phi_t = rng.normal(size=(3, 5))

        def fn(phi_s, m):
            return feature_loss(phi_t, phi_s, FeatureProjection(m))

        worst = max(worst, check_function(fn, [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))], rng=rng))
    return CheckResult("feature_loss", n_cases, worst, TOLERANCE)


def check_attention_loss(n_cases: int = 100, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        a_t = rng.dirichlet(np.ones(6), size=(2, 4))

        def fn(logits):
            return attention_loss(a_t, ad.softmax(logits))

        worst = max(worst, check_function(fn, [rng.normal(size=(2, 3, 6))], rng=rng))
    return CheckResult("attention_loss", n_cases, worst, TOLERANCE)


def tiny_pair(seed: int = 0) -> tuple[ModelConfig, ModelConfig]:
    teacher = ModelConfig(vocab_size=7, d_model=8, n_layers=2, n_heads=2, d_ff=12, max_seq_len=6, seed=seed)
    student = ModelConfig(vocab_size=7, d_model=4, n_layers=2, n_heads=2, d_ff=8, max_seq_len=6, seed=seed + 1)
    return teacher, student


def check_egad_objective(n_cases: int = 100, seed: int = 4, coords_per_param: int = 3) -> CheckResult:
    """Gradient of the whole per-step objective w.r.t. every student parameter.

    Each case is a fresh random tiny teacher/student pair and batch; a few
    coordinates of every parameter tensor are checked.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_cases):
        t_cfg, s_cfg = tiny_pair(seed=1000 + case)
        t_params = init_params(t_cfg)
        # widen the teacher so its entropies spread out
        t_params = {k: v * (25.0 if k.endswith("w") or "emb" in k else 1.0) for k, v in t_params.items()}
        s_params = {k: v * 10.0 for k, v in init_params(s_cfg).items()}
        ids = rng.integers(1, t_cfg.vocab_size, size=(2, 5))
        with ad.no_grad():
            tt = forward(t_params, ids, t_cfg)
        vocab = t_cfg.vocab_size
        t_logits = tt.logits.data.reshape(-1, vocab)
        t_hidden = tt.hidden[midpoint_layer(t_cfg)].data.reshape(-1, t_cfg.d_model)
        t_attn = tt.attention[midpoint_layer(t_cfg)].data.mean(axis=1).reshape(-1, ids.shape[1])
        h = entropy_from_logits(t_logits)
        profile = entropy_profile(h, CurriculumClock(case % 4, 2), TemperatureBounds(1.0, 5.0))
        proj = rng.normal(0, 0.3, size=(s_cfg.d_model, t_cfg.d_model))
        names = sorted(s_params)

        def objective(*arrays):
            leaves = dict(zip(names, arrays[:-1]))
            st = forward(leaves, ids, s_cfg)
            mid = midpoint_layer(s_cfg)
            s_logits = ad.reshape(st.logits, (-1, vocab))
            s_hidden = ad.reshape(st.hidden[mid], (-1, s_cfg.d_model))
            s_attn = ad.reshape(ad.mean(st.attention[mid], axis=1), (-1, ids.shape[1]))
            total, _ = egad_objective(t_logits, s_logits, profile, lam=0.5, t_hidden=t_hidden,
                                      s_hidden=s_hidden, t_attn_rows=t_attn, s_attn_rows=s_attn,
                                      proj=FeatureProjection(arrays[-1]))
            return total

        inputs = [s_params[k] for k in names] + [proj]
        err = check_function(objective, inputs, coords=coords_per_param, rng=rng)
        worst = max(worst, err)
    return CheckResult("egad_objective", n_cases, worst, TOLERANCE)


def run_all(quick: bool = False) -> list[CheckResult]:
    n = 20 if quick else 100
    results = check_primitives(n_cases=3 if quick else 5)
    results += [check_tempered_kl(n), check_feature_loss(n), check_attention_loss(n),
                check_egad_objective(max(10, n // 5) if quick else n)]
    return results
