import numpy as np
import pytest

from egad.checkpoint import MAGIC, Checkpoint, CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from egad.errors import DependencyError
from egad.model import ModelConfig, init_params


def make():
    cfg = ModelConfig(vocab_size=7, d_model=8, n_layers=1, n_heads=2, d_ff=8, max_seq_len=8)
    params = init_params(cfg)
    m = {k: np.full_like(v, 0.1) for k, v in params.items()}
    v = {k: np.full_like(p, 1e-300) for k, p in params.items()}
    return Checkpoint(model_config=cfg.to_dict(), params=params, optimizer_m=m, optimizer_v=v, step=12, seed=3,
                      metadata={"vocab": ["<pad>", "a"]})


def test_roundtrip_bitwise(tmp_path):
    ck = make()
    path = save_checkpoint(tmp_path / "a.ckpt", ck)
    back = load_checkpoint(path)
    for group in ("params", "optimizer_m", "optimizer_v"):
        a, b = getattr(ck, group), getattr(back, group)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].tobytes() == b[k].tobytes() and a[k].shape == b[k].shape
    assert (back.step, back.seed, back.metadata, back.model_config) == (12, 3, ck.metadata, ck.model_config)
    assert to_bytes(back) == to_bytes(ck)


def test_layout():
    blob = to_bytes(make())
    assert blob[:8] == MAGIC == b"EGADCKPT"
    assert int.from_bytes(blob[8:12], "little") == 1


def test_corruption_detected():
    blob = bytearray(to_bytes(make()))
    blob[100] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        from_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + bytes(64))


def test_missing_file_is_dependency_error(tmp_path):
    with pytest.raises(DependencyError):
        load_checkpoint(tmp_path / "nope.ckpt")
