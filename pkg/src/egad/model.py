"""Decoder-only transformer used for both teacher and student.

Blocks are post-norm::

    h   = LN1(x + Attn(x))
    out = LN2(h + FFN(h))

``out`` is the hidden state recorded for each layer; the attention map
recorded is the post-softmax causal matrix of every head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InputError

ParameterSet = dict  # parameter path -> np.ndarray (or Tensor inside a graph)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 64
    seed: int = 0
    activation: str = "gelu"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_ff < 1:
            raise ConfigError("d_model, n_heads and d_ff must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardTrace:
    logits: Tensor
    hidden: list[Tensor]
    attention: list[Tensor]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_seq_len, d),
    }
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.w_{name}"] = (d, d)
            shapes[p + f"attn.b_{name}"] = (d,)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ffn.w_in"] = (d, f)
        shapes[p + "ffn.b_in"] = (f,)
        shapes[p + "ffn.w_out"] = (f, d)
        shapes[p + "ffn.b_out"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    shapes["head.w"] = (d, v)
    shapes["head.b"] = (v,)
    return shapes


def param_count(config: ModelConfig) -> int:
    d, f, v, n = config.d_model, config.d_ff, config.vocab_size, config.n_layers
    per_layer = 4 * (d * d + d) + 2 * d * f + f + d + 4 * d
    return v * d + config.max_seq_len * d + n * per_layer + d * v + v


def init_params(config: ModelConfig) -> ParameterSet:
    """Normal(0, 0.02) weights, unit norm gains, zero biases."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params: ParameterSet = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf == "bias":
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    return params


def midpoint_layer(config: ModelConfig) -> int:
    return config.n_layers // 2


def _causal_mask(seq: int) -> np.ndarray:
    return np.triu(np.ones((seq, seq), dtype=bool), k=1)


def forward(params: ParameterSet, tokens, config: ModelConfig) -> ForwardTrace:
    """Run the model on ``tokens`` (``[seq]`` or ``[batch, seq]``).

    ``params`` may hold raw arrays (treated as constants) or graph leaves.
    A 1-D input yields unbatched outputs.
    """
    ids = np.asarray(tokens)
    if ids.dtype.kind not in "iu":
        raise InputError("token ids must be integers")
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise InputError(f"tokens must be 1-D or 2-D, got shape {ids.shape}")
    batch, seq = ids.shape
    if seq > config.max_seq_len:
        raise InputError(f"sequence length {seq} exceeds max_seq_len {config.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise InputError(f"token id out of range [0, {config.vocab_size})")

    p = {k: ad.as_tensor(v) for k, v in params.items()}
    h_count, h_dim = config.n_heads, config.head_dim
    act = ad.gelu if config.activation == "gelu" else ad.relu
    mask = _causal_mask(seq)
    inv_sqrt = 1.0 / math.sqrt(h_dim)

    def heads(t: Tensor) -> Tensor:
        return t.reshape(batch, seq, h_count, h_dim).transpose(0, 2, 1, 3)

    x = ad.embedding(p["tok_emb"], ids) + ad.take_rows(p["pos_emb"], np.arange(seq))
    hidden, attention = [], []
    for layer in range(config.n_layers):
        pre = f"layers.{layer}."
        q = heads(x @ p[pre + "attn.w_q"] + p[pre + "attn.b_q"])
        k = heads(x @ p[pre + "attn.w_k"] + p[pre + "attn.b_k"])
        v = heads(x @ p[pre + "attn.w_v"] + p[pre + "attn.b_v"])
        scores = ad.masked_fill(ad.scale(q @ ad.swap_last(k), inv_sqrt), mask)
        attn = ad.softmax(scores)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, seq, config.d_model)
        x = ad.layer_norm(x + (ctx @ p[pre + "attn.w_o"] + p[pre + "attn.b_o"]),
                          p[pre + "ln1.gain"], p[pre + "ln1.bias"])
        ff = act(x @ p[pre + "ffn.w_in"] + p[pre + "ffn.b_in"]) @ p[pre + "ffn.w_out"] + p[pre + "ffn.b_out"]
        x = ad.layer_norm(x + ff, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
        hidden.append(x)
        attention.append(attn)
    logits = x @ p["head.w"] + p["head.b"]

    if squeeze:
        logits = logits.reshape(seq, config.vocab_size)
        hidden = [h.reshape(seq, config.d_model) for h in hidden]
        attention = [a.reshape(h_count, seq, seq) for a in attention]
    return ForwardTrace(logits=logits, hidden=hidden, attention=attention)
