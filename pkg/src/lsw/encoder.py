"""Tokenizer, vocabulary and the shared embedding-bag section encoder.

A section's vector is ``relu(P @ mean(E[tokens]) + b)``; one encoder
instance is shared by every section of every document.
"""

from __future__ import annotations

import hashlib
import unicodedata
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numkernel as nk
from .errors import CorpusError

UNKNOWN = "<unk>"
PAD = "<pad>"
UNKNOWN_ID = 0
PAD_ID = 1

VOCAB_FORMAT = "lsw-vocab 1"
BERT_HIDDEN_SIZE = 768
DEFAULT_DIM = 64
DEFAULT_MIN_COUNT = 2
EMBED_INIT_RANGE = 0.05


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if tok:
            out.append(tok)
    return out


class Vocab:
    def __init__(self, tokens: Sequence[str], min_count: int = DEFAULT_MIN_COUNT):
        tokens = list(tokens)
        if tokens[:2] != [UNKNOWN, PAD]:
            raise ValueError(f"vocab must start with {UNKNOWN!r}, {PAD!r}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab tokens must be unique")
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.min_count = min_count

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def lookup(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.index.get(t, UNKNOWN_ID) for t in tokens], dtype=np.intp)

    def dumps(self) -> str:
        return "\n".join([VOCAB_FORMAT, f"min_count {self.min_count}", *self.tokens]) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 4 or lines[0] != VOCAB_FORMAT or not lines[1].startswith("min_count "):
            raise ValueError("not a vocab file (bad header)")
        return cls(lines[2:], min_count=int(lines[1].split()[1]))

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_vocab(texts: Iterable[str], min_count: int = DEFAULT_MIN_COUNT) -> Vocab:
    """Vocabulary over training texts, ordered by frequency then token."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in texts:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    kept = [t for t in kept if t not in (UNKNOWN, PAD)]
    return Vocab([UNKNOWN, PAD, *kept], min_count=min_count)


def param_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per parameter name, so init does not depend on which groups exist
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class SectionVector:
    values: np.ndarray
    section_name: str


class Encoder:
    """Embedding table plus a d x d projection, optionally frozen."""

    def __init__(self, vocab: Vocab, d: int = DEFAULT_DIM, seed: int = 0, frozen: bool = False):
        self.vocab = vocab
        self.d = d
        rng = param_rng(seed, "encoder.embedding")
        self.embedding = nk.ParamGroup(
            "encoder.embedding", rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(len(vocab), d))
        )
        self.projection = nk.ParamGroup(
            "encoder.projection", nk.glorot_uniform(param_rng(seed, "encoder.projection"), d, d), np.zeros(d)
        )
        self.frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool):
        self._frozen = bool(value)
        self.embedding.frozen = self._frozen
        self.projection.frozen = self._frozen

    def param_groups(self) -> list[nk.ParamGroup]:
        return [self.embedding, self.projection]

    def token_ids(self, text: str) -> np.ndarray:
        return self.vocab.lookup(tokenize(text))

    def encode_ids(self, id_lists: Sequence[np.ndarray]) -> nk.Node:
        """Encode many sections at once; returns a ``(len(id_lists), d)`` node."""
        lengths = [len(ids) for ids in id_lists]
        flat = np.concatenate(id_lists) if id_lists else np.zeros(0, dtype=np.intp)
        segments = np.repeat(np.arange(len(id_lists)), lengths)
        pooled = nk.embedding_bag_mean(self.embedding, flat.astype(np.intp), segments, len(id_lists))
        return nk.relu(nk.dense_forward(self.projection, pooled))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for group in self.param_groups():
            for arr in group.arrays().values():
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def encode_section(tokens: Sequence[str], encoder: Encoder, section_name: str = "") -> SectionVector:
    ids = encoder.vocab.lookup(tokens)
    vec = encoder.encode_ids([ids]).value[0]
    return SectionVector(vec, section_name)
