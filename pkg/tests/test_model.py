import numpy as np
import pytest

from egad import autodiff as ad
from egad.errors import ConfigError, InputError
from egad.gradcheck import check_function
from egad.model import ModelConfig, forward, init_params, midpoint_layer, param_count, param_shapes


def small(**kw):
    base = dict(vocab_size=11, d_model=16, n_layers=2, n_heads=4, d_ff=32, max_seq_len=12, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def test_param_count_hand_checked():
    cfg = ModelConfig(vocab_size=64, d_model=32, n_layers=2, n_heads=4, d_ff=128, max_seq_len=64)
    embeddings = 64 * 32 + 64 * 32
    attention = 4 * (32 * 32 + 32)
    norms = 2 * (32 + 32)
    ffn = 32 * 128 + 128 + 128 * 32 + 32
    head = 32 * 64 + 64
    hand = embeddings + 2 * (attention + norms + ffn) + head
    assert hand == 31616
    assert param_count(cfg) == hand
    assert sum(p.size for p in init_params(cfg).values()) == hand
    assert sum(int(np.prod(s)) for s in param_shapes(cfg).values()) == hand


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, d_model=8, n_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=1)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, activation="swish")


def test_midpoint_layer():
    assert [midpoint_layer(small(n_layers=n)) for n in (1, 2, 4, 6)] == [0, 1, 2, 3]


def test_init_deterministic():
    a, b = init_params(small()), init_params(small())
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(small(seed=1))
    assert not np.array_equal(a["tok_emb"], c["tok_emb"])


def test_trace_shapes():
    cfg = small()
    params = init_params(cfg)
    ids = np.array([[1, 2, 3, 4, 5], [5, 4, 3, 0, 0]])
    tr = forward(params, ids, cfg)
    assert tr.logits.shape == (2, 5, 11)
    assert len(tr.hidden) == len(tr.attention) == 2
    assert tr.hidden[0].shape == (2, 5, 16)
    assert tr.attention[1].shape == (2, 4, 5, 5)
    single = forward(params, ids[0], cfg)
    assert single.logits.shape == (5, 11)
    assert np.allclose(single.logits.data, tr.logits.data[0], rtol=0, atol=1e-12)


def test_attention_rows_are_causal_distributions():
    cfg = small()
    tr = forward(init_params(cfg), np.array([1, 2, 3, 4, 5, 6]), cfg)
    for attn in tr.attention:
        a = attn.data
        assert np.abs(a.sum(axis=-1) - 1).max() <= 1e-9
        assert np.all(a[..., np.triu_indices(6, k=1)[0], np.triu_indices(6, k=1)[1]] == 0)


def test_causality():
    cfg = small()
    params = init_params(small(seed=3))
    rng = np.random.default_rng(0)
    ids = rng.integers(1, 11, size=10)
    base = forward(params, ids, cfg).logits.data
    for j in (0, 4, 9):
        other = ids.copy()
        other[j] = (ids[j] % 10) + 1
        out = forward(params, other, cfg).logits.data
        assert np.array_equal(out[:j], base[:j])
        assert not np.allclose(out[j:], base[j:])


def test_forward_deterministic():
    cfg = small()
    params = init_params(cfg)
    ids = np.array([3, 1, 4, 1, 5, 9, 2, 6])
    a = forward(params, ids, cfg)
    b = forward(params, ids, cfg)
    assert np.array_equal(a.logits.data, b.logits.data)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.attention, b.attention))


def test_forward_input_validation():
    cfg = small()
    params = init_params(cfg)
    with pytest.raises(InputError):
        forward(params, np.array([1, 11]), cfg)
    with pytest.raises(InputError):
        forward(params, np.arange(13) % 10, cfg)
    with pytest.raises(InputError):
        forward(params, np.array([1.0, 2.0]), cfg)


def test_every_parameter_receives_gradient():
    cfg = small(n_layers=1)
    leaves = ad.parameters(init_params(small(n_layers=1, seed=2)))
    ids = np.array([[1, 2, 3, 4], [4, 3, 2, 1]])
    ad.backward(ad.tsum(ad.mul(forward(leaves, ids, cfg).logits, np.random.default_rng(0).normal(size=(2, 4, 11)))))
    # the key bias shifts every score in a row equally, so softmax cancels it
    dead = {"layers.0.attn.b_k"}
    for name, t in leaves.items():
        if name in dead:
            assert np.abs(t.grad).max() <= 1e-12
        elif name != "pos_emb":
            assert np.abs(t.grad).max() > 0, name


@pytest.mark.parametrize("activation", ["gelu", "relu"])
def test_model_gradient_fd(activation):
    cfg = ModelConfig(vocab_size=5, d_model=4, n_layers=1, n_heads=2, d_ff=6, max_seq_len=4, activation=activation)
    params = init_params(cfg)
    rng = np.random.default_rng(7)
    names = list(params)
    scaled = [params[k] * 20 + (0.5 if k.endswith("gain") else 0.0) for k in names]
    ids = np.array([1, 3, 2, 4])

    def fn(*arrays):
        return forward(dict(zip(names, arrays)), ids, cfg).logits

    err = check_function(fn, scaled, coords=3, rng=rng)
    assert err <= 1e-5
