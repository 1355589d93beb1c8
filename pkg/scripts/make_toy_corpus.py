"""Regenerate src/egad/data/toy_corpus.txt.

The corpus interleaves fixed phrases (predictable once a few characters are
seen) with short runs of uniformly random letters (unpredictable).
"""

import argparse
import random

PHRASES = [
    "the quick brown fox jumps over the lazy dog.",
    "a stitch in time saves nine.",
    "all that glitters is not gold.",
    "to be or not to be, that is the question.",
    "abcdefghijklmnopqrstuvwxyz",
    "0123456789",
    "the rain in spain stays mainly in the plain.",
    "she sells sea shells by the sea shore.",
]
NOISE_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def generate(n_chars: int, noise_share: float, seed: int) -> str:
    rng = random.Random(seed)
    parts = []
    total = 0
    while total < n_chars:
        if rng.random() < noise_share:
            body = "".join(rng.choice(NOISE_ALPHABET) for _ in range(rng.randint(6, 16)))
            part = "#" + body + "#"
        else:
            part = rng.choice(PHRASES)
        parts.append(part)
        total += len(part) + 1
    return (" ".join(parts))[:n_chars] + "\n"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="src/egad/data/toy_corpus.txt")
    parser.add_argument("--chars", type=int, default=50_000)
    parser.add_argument("--noise-share", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=1234)
    args = parser.parse_args()
    text = generate(args.chars, args.noise_share, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)


if __name__ == "__main__":
    main()
