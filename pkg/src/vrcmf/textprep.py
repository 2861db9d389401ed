"""Document preprocessing: tokenization, vocabulary, token sequences.

Pipeline per document: lowercase, tokenize on non-alphanumeric
boundaries, truncate to a maximum token count, drop stopwords. The
vocabulary keeps the most frequent remaining words (ties broken
lexicographically) up to a cap; sequences map documents to in-vocabulary
indices, silently dropping out-of-vocabulary tokens. Documents that end
up empty are kept as empty sequences so callers can drop those items.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from vrcmf.artifacts import read_blob, write_blob

VOCAB_MAGIC = "#vrcmf-vocab v1"

_TOKEN = re.compile(r"[^\W_]+")


class TextError(ValueError):
    """Unusable document input."""


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; underscores and punctuation split."""
    return _TOKEN.findall(text.lower())


@dataclass
class Vocabulary:
    """Word-to-index map plus the two reserved indices.

    Indices 0..size-1 are real words; ``oov_index`` stands in for unseen
    words and ``pad_index`` right-pads short sequences. Embedding tables
    over this vocabulary therefore need ``num_embeddings`` rows.
    """

    words: list[str]
    stopwords: frozenset = frozenset()
    max_doc_length: int = 400
    index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.index is None:
            self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise TextError("vocabulary contains duplicate words")

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def oov_index(self) -> int:
        return self.size

    @property
    def pad_index(self) -> int:
        return self.size + 1

    @property
    def num_embeddings(self) -> int:
        return self.size + 2

    def encode(self, text_or_tokens, keep_oov: bool = False) -> np.ndarray:
        """Token indices for a document, applying the full pipeline."""
        tokens = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else list(text_or_tokens)
        tokens = [t for t in tokens[:self.max_doc_length] if t not in self.stopwords]
        if keep_oov:
            ids = [self.index.get(t, self.oov_index) for t in tokens]
        else:
            ids = [self.index[t] for t in tokens if t in self.index]
        return np.array(ids, dtype=np.int32)


def read_documents(path) -> dict[str, str]:
    """Read ``item_id<TAB>text`` lines; duplicate item ids are errors."""
    docs: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            if "\t" not in line:
                raise TextError(f"line {lineno}: expected 'item_id<TAB>text'")
            item_id, text = line.split("\t", 1)
            if item_id in docs:
                raise TextError(f"line {lineno}: duplicate document for item {item_id!r}")
            docs[item_id] = text
    return docs


def read_stopwords(path) -> frozenset:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def build_vocabulary(docs: dict[str, str], cap: int = 6000,
                     stopwords: frozenset = frozenset(),
                     max_len: int = 400) -> tuple[Vocabulary, dict[str, np.ndarray]]:
    """Rank words by corpus frequency and encode every document.

    Returns the vocabulary and an item-to-sequence map. Items whose
    document is empty after the pipeline get an empty sequence.
    """
    if cap < 1:
        raise TextError("vocabulary cap must be at least 1")
    stopwords = frozenset(stopwords)
    kept: dict[str, list[str]] = {}
    counts: dict[str, int] = {}
    for item_id, text in docs.items():
        tokens = [t for t in tokenize(text)[:max_len] if t not in stopwords]
        kept[item_id] = tokens
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    if not any(kept.values()):
        raise TextError("all documents empty after preprocessing")

    ranked = sorted(counts, key=lambda w: (-counts[w], w))[:cap]
    vocab = Vocabulary(words=ranked, stopwords=stopwords, max_doc_length=max_len)
    sequences = {
        item_id: np.array([vocab.index[t] for t in tokens if t in vocab.index],
                          dtype=np.int32)
        for item_id, tokens in kept.items()
    }
    return vocab, sequences


def save_vocabulary(vocab: Vocabulary, path) -> None:
    meta = {
        "words": vocab.words,
        "stopwords": sorted(vocab.stopwords),
        "max_doc_length": vocab.max_doc_length,
    }
    write_blob(path, VOCAB_MAGIC, meta)


def load_vocabulary(path) -> Vocabulary:
    meta, _ = read_blob(path, VOCAB_MAGIC)
    return Vocabulary(words=list(meta["words"]),
                      stopwords=frozenset(meta["stopwords"]),
                      max_doc_length=int(meta["max_doc_length"]))
