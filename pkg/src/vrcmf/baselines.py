"""Reference predictors: neighborhood collaborative filtering, global mean.

The user-based predictor scores an unseen (user, item) pair as the
user's mean rating plus a similarity-weighted average of neighbor
deviations. Similarity is the cosine of mean-centered ratings over the
items both users rated; only positive similarities vote, capped at the
``neighbors`` strongest. A user with no train ratings falls back to the
global mean; a pair with no usable neighbors falls back to the user
mean.
"""

from __future__ import annotations

import math

import numpy as np

from vrcmf.ratings import RatingsMatrix, csr_index


def _user_profiles(matrix: RatingsMatrix, train_positions: np.ndarray):
    users = matrix.user_idx[train_positions]
    items = matrix.item_idx[train_positions]
    ratings = matrix.rating[train_positions]
    uorder, uptr = csr_index(users, matrix.num_users)
    iorder, iptr = csr_index(items, matrix.num_items)
    profiles = []
    means = np.empty(matrix.num_users)
    for i in range(matrix.num_users):
        pos = uorder[uptr[i]:uptr[i + 1]]
        mine = {int(items[p]): float(ratings[p]) for p in pos}
        means[i] = float(np.mean([*mine.values()])) if mine else math.nan
        profiles.append(mine)
    raters_of = [np.unique(users[iorder[iptr[j]:iptr[j + 1]]])
                 for j in range(matrix.num_items)]
    return profiles, means, raters_of


def _similarity(a: dict, b: dict, mean_a: float, mean_b: float) -> float:
    shared = a.keys() & b.keys()
    if not shared:
        return 0.0
    num = sa = sb = 0.0
    for j in shared:
        da, db = a[j] - mean_a, b[j] - mean_b
        num += da * db
        sa += da * da
        sb += db * db
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return num / math.sqrt(sa * sb)


def user_cf_predict(matrix: RatingsMatrix, train_positions: np.ndarray,
                    pairs, neighbors: int = 30) -> np.ndarray:
    """Predicted ratings for (user, item) index pairs."""
    if neighbors < 1:
        raise ValueError("neighbors must be at least 1")
    profiles, means, raters_of = _user_profiles(matrix, train_positions)
    rated_any = ~np.isnan(means)
    global_mean = float(np.mean(matrix.rating[train_positions]))

    out = np.empty(len(pairs))
    for pos, (u, j) in enumerate(pairs):
        u, j = int(u), int(j)
        if not rated_any[u]:
            out[pos] = global_mean
            continue
        votes = []
        for v in raters_of[j]:
            v = int(v)
            if v == u or not rated_any[v]:
                continue
            sim = _similarity(profiles[u], profiles[v], means[u], means[v])
            if sim > 0.0:
                votes.append((sim, v))
        votes.sort(key=lambda t: (-t[0], t[1]))
        votes = votes[:neighbors]
        if not votes:
            out[pos] = means[u]
            continue
        num = sum(sim * (profiles[v][j] - means[v]) for sim, v in votes)
        den = sum(abs(sim) for sim, _ in votes)
        out[pos] = means[u] + num / den
    return out


def baseline_user_cf(matrix: RatingsMatrix, train_positions: np.ndarray,
                     eval_positions: np.ndarray, neighbors: int = 30) -> float:
    """Held-out RMSE of the neighborhood predictor."""
    if len(eval_positions) == 0:
        raise ValueError("empty evaluation set")
    pairs = list(zip(matrix.user_idx[eval_positions], matrix.item_idx[eval_positions]))
    preds = user_cf_predict(matrix, train_positions, pairs, neighbors)
    resid = matrix.rating[eval_positions] - preds
    return math.sqrt(float(resid @ resid) / len(resid))


def baseline_global_mean(matrix: RatingsMatrix, train_positions: np.ndarray,
                         eval_positions: np.ndarray) -> float:
    """Held-out RMSE of the constant global-mean predictor."""
    if len(eval_positions) == 0:
        raise ValueError("empty evaluation set")
    mean = float(np.mean(matrix.rating[train_positions]))
    resid = matrix.rating[eval_positions] - mean
    return math.sqrt(float(resid @ resid) / len(resid))
