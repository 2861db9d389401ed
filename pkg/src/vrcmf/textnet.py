"""Trainable text branches with hand-derived exact gradients.

Two architectures map a token-index sequence to a fixed-size vector:

* :class:`TextCnn`: embedding lookup, parallel convolutional filter
  banks (one per window size) with ReLU, max-over-time pooling, then two
  tanh projections.
* :class:`TextRcnn`: embedding lookup, left and right ReLU recurrences
  producing per-token context vectors, token representation
  [left; embedding; right] optionally concatenated over a symmetric
  context window, a tanh hidden map, coordinate-wise max over positions,
  then a linear output map.

Both expose ``forward(tokens, dropout_mask)`` returning the output and a
cache, and ``backward(cache, dout)`` returning gradients keyed like
``params``. Gradients are exact: max-pooling routes to the first
occurrence of each maximum, ReLU uses the right-derivative at zero, and
the padding embedding row receives its true gradient but is re-zeroed by
``apply_gradients`` so it stays a fixed zero vector.

Dropout is "inverted": the caller supplies a multiplier mask (zeros and
1/(1-rate) values) at train time and nothing at inference, so inference
needs no rescaling. Masks are plain multipliers here, which keeps
finite-difference checks deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class TextNetError(ValueError):
    """Unusable sequence or non-finite training state."""


def _glorot(rng, shape, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _embedding_init(rng, num_embeddings, dim, pad_index):
    bound = 0.5 / dim
    emb = rng.uniform(-bound, bound, size=(num_embeddings, dim))
    emb[pad_index] = 0.0
    return emb


class TextCnn:
    """Convolutional text branch (parallel window sizes, max-over-time)."""

    def __init__(self, num_embeddings: int, emb_dim: int = 200,
                 windows: tuple[int, ...] = (3, 4, 5), filters: int = 100,
                 hidden: int = 200, out_dim: int = 50,
                 pad_index: int | None = None, rng=None):
        if pad_index is None:
            pad_index = num_embeddings - 1
        rng = rng or np.random.default_rng(0)
        self.windows = tuple(int(w) for w in windows)
        self.filters = int(filters)
        self.emb_dim = int(emb_dim)
        self.out_dim = int(out_dim)
        self.pad_index = int(pad_index)
        n_c = self.filters * len(self.windows)
        self.pooled_dim = n_c

        self.params: dict[str, np.ndarray] = {
            "emb": _embedding_init(rng, num_embeddings, emb_dim, pad_index)}
        for ws in self.windows:
            self.params[f"conv_W{ws}"] = _glorot(rng, (filters, ws, emb_dim),
                                                 ws * emb_dim, filters)
            self.params[f"conv_b{ws}"] = np.zeros(filters)
        self.params["fc1_W"] = _glorot(rng, (hidden, n_c), n_c, hidden)
        self.params["fc1_b"] = np.zeros(hidden)
        self.params["fc2_W"] = _glorot(rng, (out_dim, hidden), hidden, out_dim)
        self.params["fc2_b"] = np.zeros(out_dim)

    @property
    def dropout_dim(self) -> int:
        return self.pooled_dim

    def set_embeddings(self, vectors: np.ndarray) -> None:
        """Warm-start the word rows; reserved rows are left untouched."""
        self.params["emb"][:vectors.shape[0]] = vectors
        self.params["emb"][self.pad_index] = 0.0

    def forward(self, tokens, dropout_mask: np.ndarray | None = None):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise TextNetError("empty token sequence")
        want = max(self.windows)
        if tokens.size < want:
            tokens = np.concatenate(
                [tokens, np.full(want - tokens.size, self.pad_index, dtype=np.int64)])

        X = self.params["emb"][tokens]  # (q, p)
        segments = []
        per_window = []
        for ws in self.windows:
            W, b = self.params[f"conv_W{ws}"], self.params[f"conv_b{ws}"]
            stacked = sliding_window_view(X, (ws, self.emb_dim))[:, 0]  # (q-ws+1, ws, p)
            pre = np.tensordot(stacked, W, axes=([1, 2], [1, 2])) + b  # (q-ws+1, filters)
            act = np.maximum(pre, 0.0)
            arg = np.argmax(act, axis=0)  # first occurrence per filter
            segments.append(act[arg, np.arange(self.filters)])
            per_window.append((ws, pre, arg))
        D = np.concatenate(segments)
        mask = np.ones_like(D) if dropout_mask is None else np.asarray(dropout_mask)
        Dd = D * mask
        h = np.tanh(self.params["fc1_W"] @ Dd + self.params["fc1_b"])
        out = np.tanh(self.params["fc2_W"] @ h + self.params["fc2_b"])
        cache = (tokens, X, per_window, mask, Dd, h, out)
        return out, cache

    def backward(self, cache, dout):
        tokens, X, per_window, mask, Dd, h, out = cache
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}

        d2 = dout * (1.0 - out * out)
        grads["fc2_W"] = np.outer(d2, h)
        grads["fc2_b"] = d2
        dh = self.params["fc2_W"].T @ d2
        d1 = dh * (1.0 - h * h)
        grads["fc1_W"] = np.outer(d1, Dd)
        grads["fc1_b"] = d1
        dD = (self.params["fc1_W"].T @ d1) * mask

        dX = np.zeros_like(X)
        offset = 0
        for ws, pre, arg in per_window:
            dpool = dD[offset:offset + self.filters]
            offset += self.filters
            dact = np.zeros_like(pre)
            dact[arg, np.arange(self.filters)] = dpool
            dpre = dact * (pre > 0.0)
            grads[f"conv_b{ws}"] = dpre.sum(axis=0)
            stacked = sliding_window_view(X, (ws, self.emb_dim))[:, 0]
            grads[f"conv_W{ws}"] = np.einsum("if,iwp->fwp", dpre, stacked)
            spread = np.einsum("if,fwp->iwp", dpre, self.params[f"conv_W{ws}"])
            for o in range(ws):
                dX[o:o + spread.shape[0]] += spread[:, o, :]
        np.add.at(grads["emb"], tokens, dX)
        return grads

    def apply_gradients(self, grads, lr: float) -> None:
        for name, g in grads.items():
            self.params[name] -= lr * g
        self.params["emb"][self.pad_index] = 0.0


class TextRcnn:
    """Recurrent-convolutional text branch (contextual tokens, max pooling)."""

    def __init__(self, num_embeddings: int, emb_dim: int = 200, hidden: int = 100,
                 context_window: int = 1, out_dim: int = 50,
                 pad_index: int | None = None, rng=None):
        if context_window < 1 or context_window % 2 == 0:
            raise TextNetError("context_window must be odd and positive")
        if pad_index is None:
            pad_index = num_embeddings - 1
        rng = rng or np.random.default_rng(0)
        self.emb_dim = int(emb_dim)
        self.hidden = int(hidden)
        self.context_window = int(context_window)
        self.out_dim = int(out_dim)
        self.pad_index = int(pad_index)
        self.token_dim = 2 * hidden + emb_dim
        window_dim = self.token_dim * context_window

        self.params: dict[str, np.ndarray] = {
            "emb": _embedding_init(rng, num_embeddings, emb_dim, pad_index),
            "Wl": _glorot(rng, (hidden, hidden), hidden, hidden),
            "Wr": _glorot(rng, (hidden, hidden), hidden, hidden),
            "Wsl": _glorot(rng, (hidden, emb_dim), emb_dim, hidden),
            "Wsr": _glorot(rng, (hidden, emb_dim), emb_dim, hidden),
            "cl0": np.zeros(hidden),
            "cr0": np.zeros(hidden),
            "W2": _glorot(rng, (hidden, window_dim), window_dim, hidden),
            "b2": np.zeros(hidden),
            "W4": _glorot(rng, (out_dim, hidden), hidden, out_dim),
            "b4": np.zeros(out_dim),
        }

    @property
    def dropout_dim(self) -> int:
        return self.hidden

    def set_embeddings(self, vectors: np.ndarray) -> None:
        self.params["emb"][:vectors.shape[0]] = vectors
        self.params["emb"][self.pad_index] = 0.0

    def forward(self, tokens, dropout_mask: np.ndarray | None = None):
        tokens = np.asarray(tokens, dtype=np.int64)
        q = tokens.size
        if q == 0:
            raise TextNetError("empty token sequence")
        p = self.params
        E = p["emb"][tokens]  # (q, |e|)
        h = self.hidden

        cl = np.empty((q, h))
        cl_pre = np.zeros((q, h))
        cl[0] = p["cl0"]
        for i in range(1, q):
            cl_pre[i] = p["Wl"] @ cl[i - 1] + p["Wsl"] @ E[i - 1]
            cl[i] = np.maximum(cl_pre[i], 0.0)
        cr = np.empty((q, h))
        cr_pre = np.zeros((q, h))
        cr[q - 1] = p["cr0"]
        for i in range(q - 2, -1, -1):
            cr_pre[i] = p["Wr"] @ cr[i + 1] + p["Wsr"] @ E[i + 1]
            cr[i] = np.maximum(cr_pre[i], 0.0)

        Xtok = np.concatenate([cl, E, cr], axis=1)  # (q, token_dim)
        s = self.context_window // 2
        if s == 0:
            Xw = Xtok
        else:
            blocks = []
            for o in range(-s, s + 1):
                shifted = np.zeros_like(Xtok)
                if o < 0:
                    shifted[-o:] = Xtok[:o]
                elif o > 0:
                    shifted[:-o] = Xtok[o:]
                else:
                    shifted = Xtok.copy()
                blocks.append(shifted)
            Xw = np.concatenate(blocks, axis=1)  # (q, token_dim*(2s+1))

        pre2 = Xw @ p["W2"].T + p["b2"]
        x2 = np.tanh(pre2)
        arg = np.argmax(x2, axis=0)  # first occurrence per coordinate
        x3 = x2[arg, np.arange(x2.shape[1])]
        mask = np.ones_like(x3) if dropout_mask is None else np.asarray(dropout_mask)
        x3d = x3 * mask
        out = p["W4"] @ x3d + p["b4"]
        cache = (tokens, E, cl, cl_pre, cr, cr_pre, Xtok, Xw, x2, arg, mask, x3d)
        return out, cache

    def backward(self, cache, dout):
        tokens, E, cl, cl_pre, cr, cr_pre, Xtok, Xw, x2, arg, mask, x3d = cache
        p = self.params
        q = tokens.size
        h = self.hidden
        grads = {name: np.zeros_like(v) for name, v in p.items()}

        grads["W4"] = np.outer(dout, x3d)
        grads["b4"] = np.asarray(dout, dtype=np.float64)
        dx3 = (p["W4"].T @ dout) * mask
        dx2 = np.zeros_like(x2)
        dx2[arg, np.arange(x2.shape[1])] = dx3
        dpre2 = dx2 * (1.0 - x2 * x2)
        grads["W2"] = dpre2.T @ Xw
        grads["b2"] = dpre2.sum(axis=0)
        dXw = dpre2 @ p["W2"]

        s = self.context_window // 2
        dXtok = np.zeros_like(Xtok)
        if s == 0:
            dXtok += dXw
        else:
            width = Xtok.shape[1]
            for idx, o in enumerate(range(-s, s + 1)):
                block = dXw[:, idx * width:(idx + 1) * width]
                if o < 0:
                    dXtok[:o] += block[-o:]
                elif o > 0:
                    dXtok[o:] += block[:-o]
                else:
                    dXtok += block
        dcl = dXtok[:, :h].copy()
        dE = dXtok[:, h:h + self.emb_dim].copy()
        dcr = dXtok[:, h + self.emb_dim:].copy()

        for i in range(q - 1, 0, -1):
            dpre = dcl[i] * (cl_pre[i] > 0.0)
            grads["Wl"] += np.outer(dpre, cl[i - 1])
            grads["Wsl"] += np.outer(dpre, E[i - 1])
            dcl[i - 1] += p["Wl"].T @ dpre
            dE[i - 1] += p["Wsl"].T @ dpre
        grads["cl0"] = dcl[0]

        for i in range(q - 1):
            dpre = dcr[i] * (cr_pre[i] > 0.0)
            grads["Wr"] += np.outer(dpre, cr[i + 1])
            grads["Wsr"] += np.outer(dpre, E[i + 1])
            dcr[i + 1] += p["Wr"].T @ dpre
            dE[i + 1] += p["Wsr"].T @ dpre
        grads["cr0"] = dcr[q - 1]

        np.add.at(grads["emb"], tokens, dE)
        return grads

    def apply_gradients(self, grads, lr: float) -> None:
        for name, g in grads.items():
            self.params[name] -= lr * g
        self.params["emb"][self.pad_index] = 0.0


def branch_gradient(net, sequences, targets, lambda_v: float, lambda_w: float,
                    dropout_masks=None):
    """Loss and exact gradient of the regularized branch-fitting objective.

    loss = (lambda_v/2) sum over the batch of ||target - net(tokens)||^2
         + (lambda_w/2) sum over all parameter tensors of ||param||^2

    With ``lambda_v == 0`` the gradient is exactly ``lambda_w * param``
    for every tensor.
    """
    grads = {name: lambda_w * v for name, v in net.params.items()}
    loss = 0.5 * lambda_w * sum(float(np.sum(v * v)) for v in net.params.values())
    targets = np.asarray(targets, dtype=np.float64)
    for pos, seq in enumerate(sequences):
        mask = None if dropout_masks is None else dropout_masks[pos]
        out, cache = net.forward(seq, dropout_mask=mask)
        resid = out - targets[pos]
        loss += 0.5 * lambda_v * float(resid @ resid)
        for name, g in net.backward(cache, lambda_v * resid).items():
            grads[name] += g
    if not math.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
        raise TextNetError("non-finite branch gradient")
    return loss, grads
