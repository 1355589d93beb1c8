"""Teacher pretraining, entropy-guided distillation and the plain-KD arm."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import PAD_ID, iterate_batches, pad_batch
from .diagnostics import (
    MetricsRecord,
    grad_variance,
    midlayer_cosine,
    weight_entropy_correlation,
)
from .entropy import (
    CurriculumClock,
    EntropyProfile,
    TemperatureBounds,
    adaptive_temperatures,
    curriculum_weights,
    entropy_from_logits,
    entropy_threshold,
    ranked_deep_mask,
)
from .errors import ConfigError, DimensionError, InputError
from .losses import FeatureProjection, egad_objective, kl_from_logits
from .model import ForwardTrace, ModelConfig, ParameterSet, forward, init_params, midpoint_layer

log = logging.getLogger(__name__)

FIDELITY_LEARNING_RATE = 5e-6
DESK_LEARNING_RATE = 3e-4


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = FIDELITY_LEARNING_RATE
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t0_fraction: float = 0.5
    quantile: float = 1.0 / 3.0
    lam: float = 0.5
    t_min: float = 1.0
    t_max: float = 5.0
    seed: int = 0
    reduction: str = "mean"
    compensate_t_squared: bool = False
    alpha_ce: float = 0.0
    # ablation switches; the plain-KD arm sets all three
    uniform_weights: bool = False
    fixed_temperature: float | None = None
    deep_path: bool = True
    teacher_cache: bool = False
    max_steps: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        for name in ("beta1", "beta2", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        # a zero learning rate is allowed for fixed-point checks
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be non-negative")
        if not 0 < self.t0_fraction < 1:
            raise ConfigError(f"t0_fraction must lie in (0, 1), got {self.t0_fraction}")
        if not 0 <= self.quantile < 1:
            raise ConfigError(f"quantile must lie in [0, 1), got {self.quantile}")
        if self.lam < 0 or self.alpha_ce < 0:
            raise ConfigError("lam and alpha_ce must be non-negative")
        if not (self.t_min > 0 and self.t_max > 0):
            raise ConfigError(f"t_min and t_max must be positive (t_min={self.t_min}, t_max={self.t_max})")
        if self.t_max < self.t_min:
            raise ConfigError(f"t_max={self.t_max} is below t_min={self.t_min}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.fixed_temperature is not None and not self.fixed_temperature > 0:
            raise ConfigError("fixed_temperature must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def as_baseline(self) -> "TrainConfig":
        return replace(self, uniform_weights=True, fixed_temperature=1.0, deep_path=False)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
               config: TrainConfig) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW update with bias-corrected moments and decoupled decay.

    Returns new parameter arrays; the moment buffers in ``state`` are
    updated in place.
    """
    lr, wd, b1, b2, eps = (config.learning_rate, config.weight_decay,
                           config.beta1, config.beta2, config.eps)
    state.step += 1
    k = state.step
    c1 = 1 - b1 ** k
    c2 = 1 - b2 ** k
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / c1
        v_hat = v / c2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * wd * p
    return out, state


# ---------------------------------------------------------------------------
# helpers


def _check_corpus(sequences) -> list[np.ndarray]:
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs or all(len(s) == 0 for s in seqs):
        raise InputError("corpus is empty")
    return seqs


def total_steps(n_sequences: int, config: TrainConfig) -> int:
    steps = config.epochs * math.ceil(n_sequences / config.batch_size)
    if config.max_steps is not None:
        steps = min(steps, config.max_steps) if config.epochs else config.max_steps
    return steps


def _batch_schedule(n: int, config: TrainConfig):
    """Yield ``(step, epoch, index_array)`` for the whole run."""
    rng = np.random.default_rng(config.seed)
    limit = total_steps(n, config)
    step, epoch = 0, 0
    while step < limit:
        for idx in iterate_batches(n, config.batch_size, rng):
            if step >= limit:
                return
            yield step, epoch, idx
            step += 1
        epoch += 1


def cross_entropy(logits: Tensor, ids: np.ndarray) -> Tensor:
    """Mean next-token cross-entropy over non-padding targets."""
    vocab = logits.shape[-1]
    flat = ad.reshape(_drop_last_position(logits), (-1, vocab))
    targets = ids[:, 1:].reshape(-1)
    keep = np.flatnonzero(targets != PAD_ID)
    if keep.size == 0:
        raise InputError("batch has no next-token targets")
    logp = ad.log_softmax(ad.take_rows(flat, keep))
    onehot = np.zeros((keep.size, vocab))
    onehot[np.arange(keep.size), targets[keep]] = 1.0
    return ad.scale(ad.tsum(ad.mul(logp, onehot)), -1.0 / keep.size)


def _drop_last_position(logits: Tensor) -> Tensor:
    seq = logits.shape[1]
    return ad.split(logits, [seq - 1, 1], axis=1)[0]


# ---------------------------------------------------------------------------
# teacher


def train_teacher(config: ModelConfig, train_config: TrainConfig, corpus,
                  on_step: Callable[[int, float], None] | None = None,
                  return_state: bool = False):
    """Fit a model by next-token cross-entropy and return its parameters.

    With ``return_state`` the final optimizer state is returned as well.
    """
    seqs = _check_corpus(corpus)
    params = init_params(config)
    state = OptimizerState.zeros_like(params)
    length = min(config.max_seq_len, max(len(s) for s in seqs))
    for step, _epoch, idx in _batch_schedule(len(seqs), train_config):
        ids = pad_batch([seqs[i][:length] for i in idx], length)
        leaves = ad.parameters(params)
        loss = cross_entropy(forward(leaves, ids, config).logits, ids)
        ad.backward(loss)
        params, state = adamw_step(params, {k: t.grad for k, t in leaves.items()}, state, train_config)
        if on_step is not None:
            on_step(step, loss.item())
    return (params, state) if return_state else params


# ---------------------------------------------------------------------------
# distillation


@dataclass
class TeacherOutputs:
    """Teacher quantities needed by one distillation step (batched)."""

    logits: np.ndarray       # [B, S, V]
    hidden: np.ndarray       # [B, S, d_teacher] at the midpoint layer
    attn_rows: np.ndarray    # [B, S, S] head-averaged midpoint attention


def teacher_outputs(params: ParameterSet, config: ModelConfig, ids: np.ndarray) -> TeacherOutputs:
    with ad.no_grad():
        trace = forward(params, ids, config)
    mid = midpoint_layer(config)
    return TeacherOutputs(logits=trace.logits.data, hidden=trace.hidden[mid].data,
                          attn_rows=trace.attention[mid].data.mean(axis=1))


class _TeacherCache:
    def __init__(self, params, config, seqs, length, batch_size):
        chunks = [teacher_outputs(params, config, pad_batch(seqs[i:i + batch_size], length))
                  for i in range(0, len(seqs), batch_size)]
        self.logits = np.concatenate([c.logits for c in chunks])
        self.hidden = np.concatenate([c.hidden for c in chunks])
        self.attn_rows = np.concatenate([c.attn_rows for c in chunks])

    def get(self, idx) -> TeacherOutputs:
        return TeacherOutputs(self.logits[idx], self.hidden[idx], self.attn_rows[idx])


@dataclass
class RunArtifacts:
    student: ParameterSet
    projection: np.ndarray
    metrics: list[MetricsRecord]
    optimizer: OptimizerState
    student_config: ModelConfig
    train_config: TrainConfig
    total_steps: int
    switch_step: int


def switch_step(n_steps: int, config: TrainConfig) -> int:
    return max(1, int(math.floor(config.t0_fraction * n_steps)))


def build_profile(entropies: np.ndarray, step: int, t0: int, config: TrainConfig) -> EntropyProfile:
    if config.uniform_weights:
        weights = np.ones_like(entropies)
    else:
        weights = curriculum_weights(entropies, CurriculumClock(step, t0))
    if config.fixed_temperature is not None:
        temps = np.full_like(entropies, config.fixed_temperature)
    else:
        temps = adaptive_temperatures(entropies, TemperatureBounds(config.t_min, config.t_max))
    threshold = entropy_threshold(entropies, config.quantile)
    return EntropyProfile(entropies=entropies, weights=weights, temperatures=temps,
                          deep_mask=ranked_deep_mask(entropies, config.quantile), threshold=threshold)


@dataclass
class StepResult:
    loss: Tensor
    profile: EntropyProfile
    breakdown: object
    s_logits: Tensor
    t_logits: np.ndarray
    s_hidden: Tensor
    t_hidden: np.ndarray
    s_attn_rows: Tensor
    t_attn_rows: np.ndarray


def distill_objective(student_leaves: dict[str, Tensor], proj: FeatureProjection, ids: np.ndarray,
                      teacher: TeacherOutputs, student_config: ModelConfig, config: TrainConfig,
                      step: int, t0: int) -> StepResult:
    """Build the graph of one distillation step over the non-padding tokens of ``ids``."""
    valid = np.flatnonzero(ids.reshape(-1) != PAD_ID)
    vocab = student_config.vocab_size
    seq = ids.shape[1]
    t_logits = teacher.logits.reshape(-1, vocab)[valid]
    entropies = entropy_from_logits(t_logits)
    profile = build_profile(entropies, step, t0, config)

    trace: ForwardTrace = forward(student_leaves, ids, student_config)
    s_logits = ad.take_rows(ad.reshape(trace.logits, (-1, vocab)), valid)
    mid = midpoint_layer(student_config)
    s_hidden = ad.take_rows(ad.reshape(trace.hidden[mid], (-1, student_config.d_model)), valid)
    s_attn_rows = ad.take_rows(ad.reshape(ad.mean(trace.attention[mid], axis=1), (-1, seq)), valid)
    t_hidden = teacher.hidden.reshape(-1, teacher.hidden.shape[-1])[valid]
    t_attn_rows = teacher.attn_rows.reshape(-1, seq)[valid]

    deep = config.deep_path and config.lam > 0
    loss, breakdown = egad_objective(
        t_logits, s_logits, profile, lam=config.lam if deep else 0.0, reduction=config.reduction,
        compensate_t_squared=config.compensate_t_squared,
        t_hidden=t_hidden if deep else None, s_hidden=s_hidden if deep else None,
        t_attn_rows=t_attn_rows, s_attn_rows=s_attn_rows, proj=proj)
    if config.alpha_ce > 0:
        loss = ad.add(loss, ad.scale(cross_entropy(trace.logits, ids), config.alpha_ce))
    return StepResult(loss, profile, breakdown, s_logits, t_logits, s_hidden, t_hidden,
                      s_attn_rows, t_attn_rows)


def _check_pair(teacher_config: ModelConfig, student_config: ModelConfig) -> None:
    if teacher_config.vocab_size != student_config.vocab_size:
        raise ConfigError(f"teacher vocab {teacher_config.vocab_size} != student vocab "
                          f"{student_config.vocab_size}")
    if teacher_config.max_seq_len < student_config.max_seq_len:
        raise ConfigError("teacher context is shorter than the student's")


def distill_student(teacher: ParameterSet, teacher_config: ModelConfig, student_config: ModelConfig,
                    train_config: TrainConfig, corpus,
                    on_step: Callable[[MetricsRecord], None] | None = None,
                    init_student: ParameterSet | None = None) -> RunArtifacts:
    """Train a student against a frozen teacher under the entropy-guided objective.

    ``init_student`` overrides the seeded initialisation (used for
    self-distillation checks).
    """
    _check_pair(teacher_config, student_config)
    seqs = _check_corpus(corpus)
    length = student_config.max_seq_len
    seqs = [s[:length] for s in seqs]
    n_steps = total_steps(len(seqs), train_config)
    t0 = switch_step(n_steps, train_config)

    student = {k: v.copy() for k, v in (init_student or init_params(student_config)).items()}
    proj_init = FeatureProjection.init(student_config.d_model, teacher_config.d_model,
                                       seed=train_config.seed + 1)
    trainable = dict(student)
    trainable["proj.matrix"] = proj_init.matrix.data.copy()
    state = OptimizerState.zeros_like(trainable)
    cache = (_TeacherCache(teacher, teacher_config, seqs, length, train_config.batch_size)
             if train_config.teacher_cache else None)

    metrics: list[MetricsRecord] = []
    for step, epoch, idx in _batch_schedule(len(seqs), train_config):
        ids = pad_batch([seqs[i] for i in idx], length)
        t_out = cache.get(idx) if cache else teacher_outputs(teacher, teacher_config, ids)

        leaves = ad.parameters(trainable)
        proj = FeatureProjection(leaves.pop("proj.matrix"))
        res = distill_objective(leaves, proj, ids, t_out, student_config, train_config, step, t0)
        grads_by_id = ad.backward(res.loss)

        record = _metrics(step, epoch, res, grads_by_id, proj, train_config)
        metrics.append(record)
        if on_step is not None:
            on_step(record)

        grads = {k: t.grad for k, t in leaves.items()}
        grads["proj.matrix"] = proj.matrix.grad
        trainable, state = adamw_step(trainable, grads, state, train_config)

    projection = trainable.pop("proj.matrix")
    return RunArtifacts(student=trainable, projection=projection, metrics=metrics, optimizer=state,
                        student_config=student_config, train_config=train_config,
                        total_steps=n_steps, switch_step=t0)


def baseline_kd(teacher: ParameterSet, teacher_config: ModelConfig, student_config: ModelConfig,
                train_config: TrainConfig, corpus, **kwargs) -> RunArtifacts:
    """Plain KD: uniform weights, T = 1, logits only."""
    return distill_student(teacher, teacher_config, student_config, train_config.as_baseline(),
                           corpus, **kwargs)


def _metrics(step: int, epoch: int, res: StepResult, grads_by_id: dict, proj: FeatureProjection,
             config: TrainConfig) -> MetricsRecord:
    n = res.t_logits.shape[0]
    profile, br = res.profile, res.breakdown
    logit_grads = grads_by_id.get(res.s_logits.id)
    if logit_grads is None:
        logit_grads = np.zeros_like(res.t_logits)
    # undo the 1/N of the mean reduction so each row is the gradient of w_i * L_i
    per_token = logit_grads * (n if config.reduction == "mean" else 1)
    deep = profile.deep_mask
    feat_cos, attn_cos = midlayer_cosine(res.t_hidden, res.s_hidden.data, proj.matrix.data,
                                         res.t_attn_rows, res.s_attn_rows.data, deep)
    corr = weight_entropy_correlation(profile.weights, profile.entropies)
    return MetricsRecord(
        step=step,
        epoch=epoch,
        n_tokens=n,
        mean_kl=float(kl_from_logits(res.t_logits, res.s_logits.data).mean()),
        weighted_total=res.loss.item(),
        feat_loss=float(br.per_token_feat[deep].mean()) if deep.any() else 0.0,
        attn_loss=float(br.per_token_attn[deep].mean()) if deep.any() else 0.0,
        mean_entropy=float(profile.entropies.mean()),
        weight_entropy_corr=corr,
        deep_fraction=float(deep.mean()),
        grad_variance=grad_variance(per_token),
        temperature_mean=float(profile.temperatures.mean()),
        threshold=profile.threshold,
        feat_cosine=feat_cos,
        attn_cosine=attn_cos,
    )


# ---------------------------------------------------------------------------
# evaluation


def evaluate_student(student: ParameterSet, student_config: ModelConfig, teacher: ParameterSet,
                     teacher_config: ModelConfig, heldout) -> dict:
    """Mean KL(teacher || student), student perplexity and greedy agreement.

    Sequences are scored one at a time and per-token values reduced once at
    the end, so the result does not depend on how ``heldout`` is grouped.
    """
    _check_pair(teacher_config, student_config)
    seqs = [np.asarray(s, dtype=np.int64)[:student_config.max_seq_len] for s in heldout]
    seqs = [s for s in seqs if len(s)]
    if not seqs:
        raise InputError("held-out set is empty")
    kls, nll, matches = [], [], []
    with ad.no_grad():
        for s in seqs:
            zs = forward(student, s, student_config).logits.data
            zt = forward(teacher, s, teacher_config).logits.data
            kls.append(kl_from_logits(zt, zs))
            matches.append(zs.argmax(axis=-1) == zt.argmax(axis=-1))
            if len(s) > 1:
                shifted = zs[:-1] - zs[:-1].max(axis=-1, keepdims=True)
                logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
                nll.append(-logp[np.arange(len(s) - 1), s[1:]])
    kl_all = np.concatenate(kls)
    nll_all = np.concatenate(nll) if nll else np.zeros(0)
    match_all = np.concatenate(matches)
    return {
        "mean_kl": math.fsum(kl_all) / kl_all.size,
        "perplexity": math.exp(math.fsum(nll_all) / nll_all.size) if nll_all.size else float("nan"),
        "greedy_match": float(match_all.sum()) / match_all.size,
        "n_tokens": int(kl_all.size),
    }
