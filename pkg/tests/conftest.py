import numpy as np
import pytest

from egad.corpus import ingest_text
from egad.model import ModelConfig
from egad.trainer import TrainConfig, train_teacher

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _toy_text(n_segments=120, seed=5):
    rng = np.random.default_rng(seed)
    phrases = ["the cat sat. ", "abcabcabc ", "one two three. "]
    out = []
    for _ in range(n_segments):
        if rng.random() < 0.3:
            out.append("".join(rng.choice(list("xyzqk"), size=6)) + " ")
        else:
            out.append(phrases[rng.integers(len(phrases))])
    return "".join(out)


@pytest.fixture(scope="session")
def tiny_corpus():
    return ingest_text(_toy_text(), max_seq_len=16, val_fraction=0.1, seed=0)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_corpus):
    cfg = ModelConfig(vocab_size=tiny_corpus.vocab_size, d_model=16, n_layers=2, n_heads=2, d_ff=32,
                      max_seq_len=16, seed=0)
    params = train_teacher(cfg, TrainConfig(batch_size=16, epochs=4, learning_rate=3e-3, seed=0),
                           tiny_corpus.train)
    return cfg, params


@pytest.fixture
def student_config(tiny_corpus):
    return ModelConfig(vocab_size=tiny_corpus.vocab_size, d_model=8, n_layers=2, n_heads=2, d_ff=16,
                       max_seq_len=16, seed=1)
