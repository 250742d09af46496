"""Pair-corpus ingestion, vocabularies, splits, and embedding loading.

File formats:
  - pair corpus: UTF-8 text, one ``source<TAB>target`` pair per line
  - embeddings:  UTF-8 text, header line ``V D`` then ``word v1 ... vD`` lines
  - vocabulary:  one token per line, line number - 1 == token id
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .rng import stream_rng

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")


def tokenize(text: str) -> list[str]:
    """Split ``text`` on Unicode whitespace after NFC normalization + lowercasing."""
    return unicodedata.normalize("NFC", text).lower().split()


@dataclass
class SentencePair:
    """One (source, target) token-sequence pair; raw texts kept for re-emission."""

    source: tuple[str, ...]
    target: tuple[str, ...]
    source_text: str = ""
    target_text: str = ""

    def __post_init__(self):
        if len(self.source) < 1 or len(self.target) < 1:
            raise ValueError("sentence pair sides must be non-empty")
        if not self.source_text:
            self.source_text = " ".join(self.source)
        if not self.target_text:
            self.target_text = " ".join(self.target)

    @classmethod
    def from_text(cls, source_text: str, target_text: str) -> "SentencePair":
        return cls(
            source=tuple(tokenize(source_text)),
            target=tuple(tokenize(target_text)),
            source_text=source_text,
            target_text=target_text,
        )


@dataclass
class PairCorpus:
    """Ordered pair list; order matters because split rules are positional."""

    pairs: list[SentencePair] = field(default_factory=list)
    name: str = ""

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for p in self.pairs:
                f.write(f"{p.source_text}\t{p.target_text}\n")


def load_pair_file(path, name: str = "") -> PairCorpus:
    """Parse a pair-corpus file; malformed lines raise a line-numbered FormatError."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(
                    f"expected exactly one TAB, got {len(parts) - 1}",
                    path=path, line=lineno,
                )
            src, tgt = tokenize(parts[0]), tokenize(parts[1])
            if not src or not tgt:
                side = "source" if not src else "target"
                raise FormatError(f"empty {side} side", path=path, line=lineno)
            pairs.append(SentencePair(tuple(src), tuple(tgt), parts[0], parts[1]))
    return PairCorpus(pairs, name=name or str(path))


class Vocabulary:
    """Token<->id bijection with reserved specials at ids 0..3.

    Non-special entries are the ``max_size`` most frequent tokens of the
    corpus the vocabulary was built from; ties break by first occurrence.
    """

    def __init__(self, tokens: list[str], max_size: int):
        self.token_of = list(SPECIALS) + list(tokens)
        self.id_of = {t: i for i, t in enumerate(self.token_of)}
        self.max_size = max_size
        if len(self.id_of) != len(self.token_of):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.token_of)

    def __contains__(self, token):
        return token in self.id_of

    def encode(self, tokens) -> list[int]:
        """Map tokens to ids; out-of-vocabulary tokens become the UNK id."""
        return [self.id_of.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.token_of[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.token_of:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        if tokens[:4] != list(SPECIALS):
            raise FormatError("vocabulary file must start with the 4 specials", path=path)
        return cls(tokens[4:], max_size=len(tokens) - 4)

    def sha256(self) -> str:
        h = hashlib.sha256()
        for t in self.token_of:
            h.update(t.encode("utf-8") + b"\n")
        return h.hexdigest()


def build_vocabulary(corpus: PairCorpus, max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens over both corpus sides."""
    if max_size <= 0:
        raise ValueError("max_size must be positive")
    counts: Counter = Counter()
    first_seen: dict[str, int] = {}
    pos = 0
    for pair in corpus:
        for tok in list(pair.source) + list(pair.target):
            if tok in SPECIALS:
                continue
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = pos
            pos += 1
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary(ranked[:max_size], max_size=max_size)


def split_descript(corpus: PairCorpus):
    """Positional 8/1/1 split: in each block of 10 pairs the 5th goes to dev
    and the 10th to test; a trailing partial block follows the same rule."""
    train, dev, test = [], [], []
    for i, pair in enumerate(corpus):
        pos = i % 10
        if pos == 4:
            dev.append(pair)
        elif pos == 9:
            test.append(pair)
        else:
            train.append(pair)
    return (
        PairCorpus(train, name=f"{corpus.name}/train"),
        PairCorpus(dev, name=f"{corpus.name}/dev"),
        PairCorpus(test, name=f"{corpus.name}/test"),
    )


def split_random(corpus: PairCorpus, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle split; dev/test sizes are rounded fractions of the total."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be 3 non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = len(corpus)
    n_dev = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    if n_dev + n_test > n:
        raise ValueError("rounded dev+test exceed corpus size")
    order = stream_rng(seed, "split").permutation(n)
    shuffled = [corpus.pairs[i] for i in order]
    n_train = n - n_dev - n_test
    return (
        PairCorpus(shuffled[:n_train], name=f"{corpus.name}/train"),
        PairCorpus(shuffled[n_train:n_train + n_dev], name=f"{corpus.name}/dev"),
        PairCorpus(shuffled[n_train + n_dev:], name=f"{corpus.name}/test"),
    )


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> np.ndarray:
    """Build a (|vocab|, dim) matrix: file rows for covered tokens, the rest
    (specials included) uniform on [-0.1, 0.1] with the given seed.

    File words are normalized like corpus tokens before lookup; the first file
    row covering a token wins.
    """
    matrix = stream_rng(seed, "embeddings").uniform(-0.1, 0.1, size=(len(vocab), dim))
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split()
        if len(header) != 2:
            raise FormatError("header must be 'V D'", path=path, line=1)
        try:
            n_rows, file_dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError("header must be two integers", path=path, line=1) from None
        if file_dim != dim:
            raise FormatError(
                f"embedding dimension {file_dim} does not match configured {dim}",
                path=path, line=1,
            )
        covered = set()
        seen_rows = 0
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != 1 + dim:
                raise FormatError(
                    f"expected word + {dim} floats, got {len(parts)} fields",
                    path=path, line=lineno,
                )
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise FormatError("malformed float", path=path, line=lineno) from None
            if not np.all(np.isfinite(vec)):
                raise FormatError("non-finite embedding value", path=path, line=lineno)
            seen_rows += 1
            toks = tokenize(parts[0])
            word = toks[0] if len(toks) == 1 else None
            if word is not None and word in vocab.id_of and word not in covered:
                matrix[vocab.id_of[word]] = vec
                covered.add(word)
    if seen_rows != n_rows:
        raise FormatError(
            f"header declares {n_rows} rows, file has {seen_rows}", path=path
        )
    return matrix
