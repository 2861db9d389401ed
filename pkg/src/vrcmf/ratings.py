"""Sparse rating data: parsing, train/val/test splitting, statistics.

Raw user and item identifiers are remapped to dense 0-based indices at
parse time; the identifier lists are kept on the matrix so predictions
can be reported against the original ids. The matrix is immutable after
construction and safe to share across concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_SEPARATORS = {"double-colon": "::", "tab": "\t", "comma": ","}


class RatingsError(ValueError):
    """Malformed or inconsistent rating data."""


@dataclass
class RatingsMatrix:
    """Observed ratings in triple form plus both adjacency directions."""

    num_users: int
    num_items: int
    user_idx: np.ndarray  # int32, one per entry
    item_idx: np.ndarray  # int32
    rating: np.ndarray    # float64, each in [1, rating_max]
    timestamp: np.ndarray  # int64, 0 when the source had none
    user_ids: list[str]   # raw id per user index
    item_ids: list[str]   # raw id per item index
    rating_max: float = 5.0
    _user_ptr: np.ndarray = field(default=None, repr=False)
    _user_order: np.ndarray = field(default=None, repr=False)
    _item_ptr: np.ndarray = field(default=None, repr=False)
    _item_order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.user_idx = np.asarray(self.user_idx, dtype=np.int32)
        self.item_idx = np.asarray(self.item_idx, dtype=np.int32)
        self.rating = np.asarray(self.rating, dtype=np.float64)
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        if self._user_ptr is None:
            self._user_order, self._user_ptr = csr_index(self.user_idx, self.num_users)
            self._item_order, self._item_ptr = csr_index(self.item_idx, self.num_items)

    @property
    def num_entries(self) -> int:
        return self.user_idx.shape[0]

    def user_entries(self, i: int) -> np.ndarray:
        """Entry positions rated by user ``i``."""
        return self._user_order[self._user_ptr[i]:self._user_ptr[i + 1]]

    def item_entries(self, j: int) -> np.ndarray:
        """Entry positions that rate item ``j``."""
        return self._item_order[self._item_ptr[j]:self._item_ptr[j + 1]]

    def check_adjacency(self) -> bool:
        """Round-trip check: adjacency indices reproduce the entry list exactly."""
        seen = np.concatenate([self.user_entries(i) for i in range(self.num_users)] or
                              [np.empty(0, dtype=np.int64)])
        if not np.array_equal(np.sort(seen), np.arange(self.num_entries)):
            return False
        for i in range(self.num_users):
            if not np.all(self.user_idx[self.user_entries(i)] == i):
                return False
        for j in range(self.num_items):
            if not np.all(self.item_idx[self.item_entries(j)] == j):
                return False
        return True

    def user_index(self, raw_id: str) -> int:
        try:
            return self._user_lookup[raw_id]
        except AttributeError:
            self._user_lookup = {u: i for i, u in enumerate(self.user_ids)}
            return self._user_lookup[raw_id]

    def item_index(self, raw_id: str) -> int:
        try:
            return self._item_lookup[raw_id]
        except AttributeError:
            self._item_lookup = {t: j for j, t in enumerate(self.item_ids)}
            return self._item_lookup[raw_id]


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test partition of entry positions."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def verify_partition(self, num_entries: int) -> bool:
        parts = [self.train, self.validation, self.test]
        merged = np.concatenate(parts)
        if merged.shape[0] != num_entries:
            return False
        return np.array_equal(np.sort(merged), np.arange(num_entries))


@dataclass
class DatasetStats:
    num_users: int
    num_items: int
    rating_count: int
    sparsity: float  # 1 - count / (users * items)

    def sparsity_percent(self) -> str:
        # Truncated, not rounded: the conventional way these figures are
        # quoted, and the only form consistent across reference datasets.
        return f"{math.floor(self.sparsity * 10000.0) / 100.0:.2f}%"


def csr_index(indices: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(indices, kind="stable").astype(np.int64)
    counts = np.bincount(indices, minlength=size)
    ptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return order, ptr


def parse_ratings(path, fmt: str = "double-colon", rating_max: float = 5.0) -> RatingsMatrix:
    """Parse a ratings file into a :class:`RatingsMatrix`.

    Each line holds ``user SEP item SEP rating [SEP timestamp]`` where SEP
    is chosen by ``fmt`` (one of ``double-colon``, ``tab``, ``comma``).
    Raw identifiers are remapped to dense indices in first-appearance
    order. Duplicate (user, item) pairs and out-of-range ratings are hard
    errors rather than silent repairs.
    """
    try:
        sep = FORMAT_SEPARATORS[fmt]
    except KeyError:
        raise RatingsError(f"unknown ratings format {fmt!r}") from None

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    stamps: list[int] = []

    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(sep)
            if len(parts) < 3:
                raise RatingsError(f"line {lineno}: expected at least 3 fields, got {len(parts)}")
            try:
                value = float(parts[2])
            except ValueError:
                raise RatingsError(f"line {lineno}: rating {parts[2]!r} is not numeric") from None
            if not np.isfinite(value) or not 1.0 <= value <= rating_max:
                raise RatingsError(f"line {lineno}: rating {value} outside [1, {rating_max}]")
            if len(parts) > 3 and parts[3]:
                try:
                    stamp = int(parts[3])
                except ValueError:
                    raise RatingsError(f"line {lineno}: timestamp {parts[3]!r} is not an integer") from None
            else:
                stamp = 0
            u = user_map.setdefault(parts[0], len(user_map))
            t = item_map.setdefault(parts[1], len(item_map))
            if (u, t) in seen:
                raise RatingsError(
                    f"line {lineno}: duplicate rating for user {parts[0]!r} and item {parts[1]!r}")
            seen.add((u, t))
            users.append(u)
            items.append(t)
            ratings.append(value)
            stamps.append(stamp)

    if not users:
        raise RatingsError("no entries")

    return RatingsMatrix(
        num_users=len(user_map),
        num_items=len(item_map),
        user_idx=np.array(users, dtype=np.int32),
        item_idx=np.array(items, dtype=np.int32),
        rating=np.array(ratings, dtype=np.float64),
        timestamp=np.array(stamps, dtype=np.int64),
        user_ids=list(user_map),
        item_ids=list(item_map),
        rating_max=rating_max,
    )


def write_ratings(matrix: RatingsMatrix, path, fmt: str = "double-colon") -> None:
    """Serialize back to the line format; re-parsing reproduces the entries."""
    sep = FORMAT_SEPARATORS[fmt]
    with open(path, "w", encoding="utf-8") as fh:
        for n in range(matrix.num_entries):
            fh.write(sep.join((
                matrix.user_ids[matrix.user_idx[n]],
                matrix.item_ids[matrix.item_idx[n]],
                repr(float(matrix.rating[n])),
                str(int(matrix.timestamp[n])),
            )) + "\n")


def split_sizes(count: int, fractions: tuple[float, ...]) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``count`` entries to the fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    if np.any(fr <= 0.0) or abs(float(fr.sum()) - 1.0) > 1e-9:
        raise RatingsError("fractions must be positive and sum to 1")
    exact = fr * count
    base = np.floor(exact).astype(np.int64)
    leftover = count - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    for pos in order[:leftover]:
        base[pos] += 1
    return tuple(int(b) for b in base)


def split_dataset(matrix: RatingsMatrix,
                  fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> DatasetSplit:
    """Random disjoint train/validation/test partition, deterministic under seed.

    After the random assignment, any user or item left with zero training
    ratings gets one of its validation/test entries swapped into train
    (lowest timestamp first, then lowest entry position). Each such move
    is balanced by moving one "safe" training entry -- one whose user and
    item both keep at least one other training rating -- back to the
    donating set, so set sizes stay exact whenever a safe donor exists.
    """
    n = matrix.num_entries
    if n < 3:
        raise RatingsError("need at least 3 entries to split")
    n_train, n_val, n_test = split_sizes(n, fractions)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assign = np.empty(n, dtype=np.int8)  # 0=train 1=val 2=test
    assign[perm[:n_train]] = 0
    assign[perm[n_train:n_train + n_val]] = 1
    assign[perm[n_train + n_val:]] = 2

    user_train = np.bincount(matrix.user_idx[assign == 0], minlength=matrix.num_users)
    item_train = np.bincount(matrix.item_idx[assign == 0], minlength=matrix.num_items)

    # Donor candidates: train entries in descending (timestamp, position)
    # order; safety is rechecked at use time because counts shift.
    donor_order = np.lexsort((-np.arange(n), -matrix.timestamp))
    donor_used = np.zeros(n, dtype=bool)

    def entries_of(kind: str, idx: int) -> np.ndarray:
        return matrix.user_entries(idx) if kind == "user" else matrix.item_entries(idx)

    def repair(kind: str, count_arr: np.ndarray) -> None:
        for idx in np.nonzero(count_arr == 0)[0]:
            held = entries_of(kind, int(idx))
            held = held[assign[held] != 0]
            if held.size == 0:
                continue  # id never observed in this matrix slice
            pick_order = np.lexsort((held, matrix.timestamp[held]))
            pick = int(held[pick_order[0]])
            source = int(assign[pick])
            assign[pick] = 0
            user_train[matrix.user_idx[pick]] += 1
            item_train[matrix.item_idx[pick]] += 1
            for cand in donor_order:
                cand = int(cand)
                if donor_used[cand] or assign[cand] != 0 or cand == pick:
                    continue
                cu, ci = int(matrix.user_idx[cand]), int(matrix.item_idx[cand])
                if user_train[cu] > 1 and item_train[ci] > 1:
                    assign[cand] = source
                    user_train[cu] -= 1
                    item_train[ci] -= 1
                    donor_used[cand] = True
                    break
            # no safe donor: accept a one-entry size drift

    repair("user", user_train)
    repair("item", item_train)

    return DatasetSplit(
        train=np.sort(np.nonzero(assign == 0)[0]),
        validation=np.sort(np.nonzero(assign == 1)[0]),
        test=np.sort(np.nonzero(assign == 2)[0]),
        seed=seed,
    )


def sparsity_stats(matrix: RatingsMatrix) -> DatasetStats:
    """Sparsity of the observed matrix: 1 - count / (users * items)."""
    return stats_from_counts(matrix.num_users, matrix.num_items, matrix.num_entries)


def stats_from_counts(num_users: int, num_items: int, rating_count: int) -> DatasetStats:
    if num_users * num_items <= 0:
        raise RatingsError("empty matrix has no sparsity")
    sparsity = 1.0 - rating_count / (num_users * num_items)
    return DatasetStats(num_users, num_items, rating_count, sparsity)
