"""Character-level corpus ingestion and batching."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import IngestionError

PAD_ID = 0
PAD_SYMBOL = "<pad>"


@dataclass
class Corpus:
    vocab: list[str]
    sequences: list[np.ndarray]
    train: list[np.ndarray] = field(default_factory=list)
    val: list[np.ndarray] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> np.ndarray:
        index = {ch: i for i, ch in enumerate(self.vocab)}
        try:
            return np.array([index[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise IngestionError(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        return "".join(self.vocab[i] for i in ids if i != PAD_ID)


def bundled_corpus_path() -> str:
    return str(resources.files("egad").joinpath("data/toy_corpus.txt"))


def build_vocab(text: str) -> list[str]:
    vocab = [PAD_SYMBOL]
    seen = set()
    for ch in text:
        if ch not in seen:
            seen.add(ch)
            vocab.append(ch)
    return vocab


def chunk(ids: np.ndarray, max_seq_len: int) -> list[np.ndarray]:
    return [ids[i:i + max_seq_len].copy() for i in range(0, len(ids), max_seq_len)]


def split_train_val(sequences: list[np.ndarray], val_fraction: float, seed: int):
    n = len(sequences)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(val_fraction * n)) if n > 1 else 0
    val = [sequences[i] for i in sorted(order[:n_val])]
    train = [sequences[i] for i in sorted(order[n_val:])]
    return train, val


def ingest_text(text: str, max_seq_len: int = 64, val_fraction: float = 0.05, seed: int = 0) -> Corpus:
    if not text:
        raise IngestionError("corpus is empty")
    vocab = build_vocab(text)
    index = {ch: i for i, ch in enumerate(vocab)}
    ids = np.array([index[ch] for ch in text], dtype=np.int64)
    sequences = chunk(ids, max_seq_len)
    train, val = split_train_val(sequences, val_fraction, seed)
    return Corpus(vocab=vocab, sequences=sequences, train=train, val=val)


def ingest_corpus(path: str | os.PathLike, max_seq_len: int = 64, val_fraction: float = 0.05,
                  seed: int = 0) -> Corpus:
    """Read a UTF-8 file into a character-level corpus.

    The vocabulary is the padding symbol followed by the file's distinct
    characters in first-appearance order. The token stream is cut into
    consecutive chunks of ``max_seq_len`` and split train/validation by a
    seeded shuffle.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read corpus {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"corpus {path} is not valid UTF-8: {exc}") from exc
    return ingest_text(text, max_seq_len=max_seq_len, val_fraction=val_fraction, seed=seed)


def pad_batch(sequences: list[np.ndarray], length: int) -> np.ndarray:
    out = np.full((len(sequences), length), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(sequences):
        out[row, :len(seq)] = seq
    return out


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays covering a fresh permutation of ``range(n)``."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
