"""Word-embedding pretraining from windowed co-occurrence counts.

The objective is the weighted least-squares fit

    J = sum over stored pairs of f(co_ij) (w_i . wt_j + b_i + bt_j - log co_ij)^2

with the saturating weight f(x) = (x / x_max)^beta below x_max and 1 at
or above it. Optimization is per-pair adagrad: squared gradients
accumulate (initialized to 1.0 so early steps are just lr-scaled), each
parameter steps by lr * grad / sqrt(accumulator). Pairs are visited in a
freshly seeded shuffle every epoch and the exact J is evaluated after
each epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from vrcmf.artifacts import read_blob, write_blob

EMBEDDING_MAGIC = "#vrcmf-emb v1"


class GloveError(ValueError):
    """Degenerate corpus or diverged optimization."""


@dataclass
class CooccurrenceMatrix:
    """Sparse map (i, j) -> decay-weighted count, both orders stored."""

    pairs: dict
    window_size: int
    token_count: int

    @property
    def num_words(self) -> int:
        return 1 + max((max(i, j) for i, j in self.pairs), default=-1)

    def check(self) -> None:
        for key, value in self.pairs.items():
            if not (math.isfinite(value) and value > 0.0):
                raise GloveError(f"co-occurrence for pair {key} is {value!r}")


def build_cooccurrence(sequences, window: int) -> CooccurrenceMatrix:
    """Accumulate 1/d for every ordered pair at distance d <= window.

    Pairs never straddle sequence boundaries, so concatenating corpora is
    additive in the counts.
    """
    if window < 1:
        raise GloveError("window must be at least 1")
    pairs: dict = {}
    total = 0
    for seq in sequences:
        seq = np.asarray(seq)
        total += len(seq)
        for pos in range(len(seq)):
            left = int(seq[pos])
            for d in range(1, min(window, len(seq) - 1 - pos) + 1):
                right = int(seq[pos + d])
                decay = 1.0 / d
                pairs[left, right] = pairs.get((left, right), 0.0) + decay
                pairs[right, left] = pairs.get((right, left), 0.0) + decay
    return CooccurrenceMatrix(pairs=pairs, window_size=window, token_count=total)


def weight_fn(x: float, x_max: float = 100.0, beta: float = 0.75) -> float:
    """Saturating co-occurrence weight: (x/x_max)^beta below x_max, else 1."""
    return (x / x_max) ** beta if x < x_max else 1.0


@dataclass
class EmbeddingTable:
    """Main and context vectors with biases and adagrad state."""

    w: np.ndarray   # (num_words, dim)
    wt: np.ndarray  # (num_words, dim)
    b: np.ndarray   # (num_words,)
    bt: np.ndarray  # (num_words,)
    loss_history: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def vectors(self) -> np.ndarray:
        """Combined main-plus-context vectors, the conventional export."""
        return self.w + self.wt


def glove_loss(table: EmbeddingTable, co: CooccurrenceMatrix,
               x_max: float, beta: float) -> float:
    total = 0.0
    for (i, j), x in co.pairs.items():
        resid = float(table.w[i] @ table.wt[j]) + table.b[i] + table.bt[j] - math.log(x)
        total += weight_fn(x, x_max, beta) * resid * resid
    return total


def train_glove(co: CooccurrenceMatrix, dim: int = 200, x_max: float = 100.0,
                beta: float = 0.75, epochs: int = 50, lr: float = 0.05,
                seed: int = 0, num_words: int | None = None) -> EmbeddingTable:
    """Fit an :class:`EmbeddingTable` to the co-occurrence statistics.

    ``loss_history`` holds the initial J followed by J after each epoch;
    a non-finite J aborts with a "diverged" error.
    """
    if not co.pairs:
        raise GloveError("empty co-occurrence matrix")
    if not 0.0 < beta <= 1.0:
        raise GloveError("beta must lie in (0, 1]")
    if x_max <= 0.0:
        raise GloveError("x_max must be positive")
    co.check()

    n = num_words if num_words is not None else co.num_words
    rng = np.random.default_rng(seed)
    scale = 0.5 / dim
    table = EmbeddingTable(
        w=rng.uniform(-scale, scale, size=(n, dim)),
        wt=rng.uniform(-scale, scale, size=(n, dim)),
        b=np.zeros(n),
        bt=np.zeros(n),
    )
    acc_w = np.ones((n, dim))
    acc_wt = np.ones((n, dim))
    acc_b = np.ones(n)
    acc_bt = np.ones(n)

    items = list(co.pairs.items())
    logs = [math.log(x) for _, x in items]
    weights = [weight_fn(x, x_max, beta) for _, x in items]

    table.loss_history.append(glove_loss(table, co, x_max, beta))
    for _ in range(epochs):
        for pos in rng.permutation(len(items)):
            (i, j), _ = items[pos]
            resid = float(table.w[i] @ table.wt[j]) + table.b[i] + table.bt[j] - logs[pos]
            common = 2.0 * weights[pos] * resid
            gw = common * table.wt[j]
            gwt = common * table.w[i]
            acc_w[i] += gw * gw
            acc_wt[j] += gwt * gwt
            acc_b[i] += common * common
            acc_bt[j] += common * common
            table.w[i] -= lr * gw / np.sqrt(acc_w[i])
            table.wt[j] -= lr * gwt / np.sqrt(acc_wt[j])
            table.b[i] -= lr * common / math.sqrt(acc_b[i])
            table.bt[j] -= lr * common / math.sqrt(acc_bt[j])
        loss = glove_loss(table, co, x_max, beta)
        if not math.isfinite(loss):
            raise GloveError("diverged; lower lr")
        table.loss_history.append(loss)
    return table


def save_embeddings(table: EmbeddingTable, path) -> None:
    meta = {"dim": table.dim, "loss_history": [float(v) for v in table.loss_history]}
    write_blob(path, EMBEDDING_MAGIC, meta,
               {"w": table.w, "wt": table.wt, "b": table.b, "bt": table.bt})


def load_embeddings(path) -> EmbeddingTable:
    meta, arrays = read_blob(path, EMBEDDING_MAGIC)
    return EmbeddingTable(w=arrays["w"], wt=arrays["wt"], b=arrays["b"], bt=arrays["bt"],
                          loss_history=list(meta.get("loss_history", [])))


def export_text(table: EmbeddingTable, words: list[str], path) -> None:
    """Human-readable `word v1 v2 ...` lines using the combined vectors."""
    combined = table.vectors()
    with open(path, "w", encoding="utf-8") as fh:
        for idx, word in enumerate(words):
            fh.write(word + " " + " ".join(repr(float(v)) for v in combined[idx]) + "\n")
