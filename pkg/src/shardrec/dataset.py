"""Implicit-feedback interaction data: loading, splitting and deletion."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import EmptyDatasetError, NotFoundError, ParseError, SplitError

_logger = logging.getLogger(__name__)

SEPARATORS = ("::", "\t", ",")
FORMAT_SEPARATORS = {"tsv": "\t", "csv": ",", "dat": "::"}


class Interaction(NamedTuple):
    user: int
    item: int


class Dataset:
    """A binary user-item interaction matrix.

    Interactions are held as two parallel ``int64`` arrays sorted by
    ``(user, item)`` with duplicates removed. Index maps (``user_ids`` /
    ``item_ids``, original token per index) are shared, never copied, by
    datasets derived from one another. Instances are treated as immutable;
    every mutating operation returns a new dataset.
    """

    def __init__(
        self,
        users: Iterable[int],
        items: Iterable[int],
        num_users: int | None = None,
        num_items: int | None = None,
        user_ids: Sequence[str] | None = None,
        item_ids: Sequence[str] | None = None,
    ):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if num_users is None:
            num_users = len(user_ids) if user_ids is not None else int(users.max(initial=-1)) + 1
        if num_items is None:
            num_items = len(item_ids) if item_ids is not None else int(items.max(initial=-1)) + 1
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise ValueError("item index out of range")

        keys = np.unique(users * num_items + items)
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.keys = keys
        self.users = keys // max(num_items, 1)
        self.items = keys % max(num_items, 1)
        for arr in (self.keys, self.users, self.items):
            arr.flags.writeable = False
        self.user_ids = user_ids
        self.item_ids = item_ids
        self._user_csr = None
        self._item_csr = None

    # -- construction helpers -------------------------------------------------

    def derive(self, users, items) -> "Dataset":
        """New dataset over the same index maps."""
        return Dataset(users, items, self.num_users, self.num_items, self.user_ids, self.item_ids)

    def subset(self, mask_or_index) -> "Dataset":
        return self.derive(self.users[mask_or_index], self.items[mask_or_index])

    # -- basic protocol -------------------------------------------------------

    def __len__(self):
        return int(self.keys.size)

    def __iter__(self):
        for u, v in zip(self.users.tolist(), self.items.tolist()):
            yield Interaction(u, v)

    def __contains__(self, y) -> bool:
        u, v = int(y[0]), int(y[1])
        if not (0 <= u < self.num_users and 0 <= v < self.num_items):
            return False
        key = u * self.num_items + v
        pos = np.searchsorted(self.keys, key)
        return bool(pos < self.keys.size and self.keys[pos] == key)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and np.array_equal(self.keys, other.keys)
        )

    __hash__ = None

    def __repr__(self):
        return f"Dataset(m={self.num_users}, n={self.num_items}, |Y|={len(self)})"

    def contains_many(self, users, items) -> np.ndarray:
        """Vectorized membership test for ``(users[k], items[k])`` pairs."""
        csr = self.user_csr
        return _csr_contains(
            csr.indptr,
            csr.indices,
            np.ascontiguousarray(users, dtype=np.int64),
            np.ascontiguousarray(items, dtype=np.int64),
        )

    def position(self, y) -> int:
        """Index of interaction ``y`` in the sorted interaction arrays."""
        u, v = int(y[0]), int(y[1])
        if not (0 <= u < self.num_users and 0 <= v < self.num_items):
            raise NotFoundError(f"interaction ({u}, {v}) is outside the index range")
        key = u * self.num_items + v
        pos = int(np.searchsorted(self.keys, key))
        if pos >= self.keys.size or self.keys[pos] != key:
            raise NotFoundError(f"interaction ({u}, {v}) not present")
        return pos

    # -- adjacency ------------------------------------------------------------

    @property
    def user_csr(self) -> sp.csr_matrix:
        """``m x n`` binary CSR matrix; row ``u`` lists u's items in order."""
        if self._user_csr is None:
            data = np.ones(len(self), dtype=np.float32)
            indptr = np.zeros(self.num_users + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.users, minlength=self.num_users), out=indptr[1:])
            self._user_csr = sp.csr_matrix(
                (data, self.items.astype(np.int32), indptr), shape=(self.num_users, self.num_items)
            )
        return self._user_csr

    @property
    def item_csr(self) -> sp.csr_matrix:
        """``n x m`` transpose of :attr:`user_csr`."""
        if self._item_csr is None:
            csr = self.user_csr.T.tocsr()
            csr.sort_indices()
            self._item_csr = csr
        return self._item_csr

    def user_items(self, u: int) -> np.ndarray:
        csr = self.user_csr
        return csr.indices[csr.indptr[u] : csr.indptr[u + 1]]

    def item_users(self, v: int) -> np.ndarray:
        csr = self.item_csr
        return csr.indices[csr.indptr[v] : csr.indptr[v + 1]]

    @property
    def user_adjacency(self) -> list[np.ndarray]:
        return [self.user_items(u) for u in range(self.num_users)]

    @property
    def item_adjacency(self) -> list[np.ndarray]:
        return [self.item_users(v) for v in range(self.num_items)]

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def active_users(self) -> np.ndarray:
        return np.unique(self.users)

    def active_items(self) -> np.ndarray:
        return np.unique(self.items)

    # -- mutation (returns new values) ----------------------------------------

    def remove(self, y) -> "Dataset":
        pos = self.position(y)
        keep = np.ones(len(self), dtype=bool)
        keep[pos] = False
        return self.subset(keep)

    def add(self, y) -> "Dataset":
        if y in self:
            return self
        return self.derive(np.append(self.users, int(y[0])), np.append(self.items, int(y[1])))

    def union(self, *others: "Dataset") -> "Dataset":
        users = np.concatenate([self.users] + [o.users for o in others])
        items = np.concatenate([self.items] + [o.items for o in others])
        return self.derive(users, items)

    # -- output ---------------------------------------------------------------

    def dump(self, path, index_maps: bool = True):
        """Write ``user\\titem`` lines in sorted order.

        With ``index_maps``, sidecar files ``<path>.users`` and ``<path>.items``
        hold ``original_id\\tindex`` lines.
        """
        np.savetxt(path, np.column_stack([self.users, self.items]), fmt="%d", delimiter="\t")
        if index_maps:
            _write_index_map(f"{path}.users", self.user_ids, self.num_users)
            _write_index_map(f"{path}.items", self.item_ids, self.num_items)


@njit(cache=True)
def _csr_contains(indptr, indices, users, items):
    out = np.zeros(users.shape[0], np.bool_)
    for k in range(users.shape[0]):
        lo = indptr[users[k]]
        hi = indptr[users[k] + 1]
        target = items[k]
        while lo < hi:
            mid = (lo + hi) // 2
            if indices[mid] < target:
                lo = mid + 1
            else:
                hi = mid
        out[k] = lo < indptr[users[k] + 1] and indices[lo] == target
    return out


def remove_interaction(dataset: Dataset, y) -> Dataset:
    """Return ``dataset`` without interaction ``y``; raises if it is absent."""
    return dataset.remove(y)


def _write_index_map(path, ids, count):
    with open(path, "w", encoding="utf-8") as fh:
        for idx in range(count):
            token = ids[idx] if ids is not None else str(idx)
            fh.write(f"{token}\t{idx}\n")


def _read_index_map(path) -> list[str]:
    ids: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.rsplit("\t", 1)
            if len(parts) != 2:
                raise ParseError("expected 'original_id<TAB>index'", path, lineno)
            try:
                ids[int(parts[1])] = parts[0]
            except ValueError as exc:
                raise ParseError(f"bad index {parts[1]!r}", path, lineno) from exc
    if sorted(ids) != list(range(len(ids))):
        raise ParseError("index map is not contiguous from 0", path)
    return [ids[i] for i in range(len(ids))]


def load_dump(path) -> Dataset:
    """Inverse of :meth:`Dataset.dump`."""
    user_ids = _read_index_map(f"{path}.users")
    item_ids = _read_index_map(f"{path}.items")
    if os.path.getsize(path) == 0:
        pairs = np.zeros((0, 2), dtype=np.int64)
    else:
        pairs = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    return Dataset(pairs[:, 0], pairs[:, 1], len(user_ids), len(item_ids), user_ids, item_ids)


def detect_separator(line: str) -> str:
    for sep in SEPARATORS:
        if sep in line:
            return sep
    raise ParseError("cannot detect a separator (tried '::', tab, comma)")


def load_interactions(
    path,
    format: str | None = None,
    rating_threshold: float | None = None,
    sep: str | None = None,
) -> Dataset:
    """Read ``user<sep>item[<sep>rating[<sep>timestamp]]`` lines.

    Indices are assigned in first-appearance order. Every present row is a
    positive interaction unless ``rating_threshold`` is given, in which case
    rows rated below it are dropped (their user/item tokens are not indexed
    unless another row introduces them). ``format`` picks the separator
    (``tsv``, ``csv`` or ``dat``); ``sep`` overrides it; otherwise it is
    detected from the first data line.
    """
    if sep is None and format is not None:
        try:
            sep = FORMAT_SEPARATORS[format]
        except KeyError:
            raise ParseError(f"unknown format {format!r}") from None

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if sep is None:
                sep = detect_separator(line)
            parts = line.split(sep)
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise ParseError("expected at least user and item columns", path, lineno)
            if rating_threshold is not None:
                if len(parts) < 3:
                    raise ParseError("rating threshold given but row has no rating", path, lineno)
                try:
                    rating = float(parts[2])
                except ValueError:
                    raise ParseError(f"bad rating {parts[2]!r}", path, lineno) from None
                if rating < rating_threshold:
                    continue
            elif len(parts) >= 3 and parts[2]:
                try:
                    float(parts[2])
                except ValueError:
                    raise ParseError(f"bad rating {parts[2]!r}", path, lineno) from None
            u = user_index.setdefault(parts[0], len(user_index))
            v = item_index.setdefault(parts[1], len(item_index))
            users.append(u)
            items.append(v)
    if not users:
        raise EmptyDatasetError(f"{path}: no interactions")
    ds = Dataset(users, items, len(user_index), len(item_index), list(user_index), list(item_index))
    _logger.info("loaded %s from %s", ds, path)
    return ds


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_fraction_of_train: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("train_fraction", "validation_fraction_of_train"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise SplitError(f"{name} must lie in (0, 1), got {value}")


def _held_out_size(total: int, fraction: float) -> int:
    # round() strips binary noise such as 10 * (1 - 0.8) = 1.999...
    return max(1, math.floor(round(total * fraction, 9)))


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()):
    """Random global split into ``(train, validation, test)``.

    The test set takes ``floor(N * (1 - train_fraction))`` interactions and
    validation ``floor(N_rest * validation_fraction_of_train)`` of the rest,
    each at least one; the remainder is training data.
    """
    n = len(dataset)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    n_test = _held_out_size(n, 1.0 - spec.train_fraction)
    n_val = _held_out_size(n - n_test, spec.validation_fraction_of_train)
    n_train = n - n_test - n_val
    if n_train <= 0:
        raise SplitError(f"split of {n} interactions leaves an empty training set")
    perm = np.random.default_rng(spec.seed).permutation(n)
    test_idx = perm[:n_test]
    val_idx = perm[n_test : n_test + n_val]
    train_idx = perm[n_test + n_val :]
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(val_idx)), dataset.subset(np.sort(test_idx))
