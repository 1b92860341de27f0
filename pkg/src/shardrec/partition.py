"""Balanced data partition of training interactions into K shards.

Three embedding-driven strategies share one loop (anchors, distance table,
greedy capacity-bounded assignment in ascending distance order, anchor
update to member means):

* ``user``        -- units are users; a user's interactions move together.
* ``item``        -- units are items.
* ``interaction`` -- units are single interactions; the distance to an
  anchor pair is the product (or, optionally, the sum) of the user-part and
  item-part Euclidean distances.

``random`` shuffles interactions and deals them round-robin.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import Dataset
from .errors import CapacityError, ConfigError, NotFoundError, ParseError, ShapeError

_logger = logging.getLogger(__name__)

STRATEGIES = ("ubp", "ibp", "inbp", "random")
KIND_OF = {"ubp": "user", "ibp": "item", "inbp": "interaction", "random": "random"}


@dataclass
class PretrainedEmbeddings:
    user_vecs: np.ndarray
    item_vecs: np.ndarray

    def __post_init__(self):
        self.user_vecs = np.asarray(self.user_vecs, dtype=np.float64)
        self.item_vecs = np.asarray(self.item_vecs, dtype=np.float64)
        if self.user_vecs.ndim != 2 or self.item_vecs.shape[1:] != self.user_vecs.shape[1:]:
            raise ShapeError("user and item embeddings must be 2-d with equal width")
        if not (np.isfinite(self.user_vecs).all() and np.isfinite(self.item_vecs).all()):
            raise ValueError("pretrained embeddings contain non-finite values")

    @property
    def dim(self) -> int:
        return self.user_vecs.shape[1]

    def check(self, data: Dataset):
        if self.user_vecs.shape[0] != data.num_users or self.item_vecs.shape[0] != data.num_items:
            raise ShapeError(
                f"embeddings cover {self.user_vecs.shape[0]} users / {self.item_vecs.shape[0]} items, "
                f"dataset has {data.num_users} / {data.num_items}"
            )


@dataclass
class PartitionConfig:
    num_shards: int = 10
    capacity: int | None = None
    max_iterations: int = 50
    seed: int = 0
    tolerance: float = 1e-6
    combine: str = "product"

    def __post_init__(self):
        if self.num_shards < 1:
            raise ConfigError("num_shards must be >= 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.capacity is not None and self.capacity < 1:
            raise ConfigError("capacity must be >= 1")
        if self.combine not in ("product", "sum"):
            raise ConfigError("combine must be 'product' or 'sum'")

    def capacity_for(self, units: int) -> int:
        t = self.capacity if self.capacity is not None else max(1, math.ceil(units / self.num_shards))
        if t * self.num_shards < units:
            raise CapacityError(
                f"capacity {t} x {self.num_shards} shards cannot hold {units} units; "
                f"need t >= {math.ceil(units / self.num_shards)}"
            )
        return t


@dataclass
class Anchors:
    kind: str
    user_centers: np.ndarray | None
    item_centers: np.ndarray | None = None


class ShardAssignment:
    """Shard label for every training interaction.

    ``labels[k]`` is the shard of the k-th interaction of ``train`` (in its
    sorted order); ``keys`` are the matching ``user * n + item`` codes.
    """

    def __init__(self, kind, num_shards, capacity, seed, keys, labels, num_items, iterations=0, anchors=None):
        self.kind = kind
        self.num_shards = int(num_shards)
        self.capacity = int(capacity)
        self.seed = int(seed)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_items = int(num_items)
        self.iterations = iterations
        self.anchors = anchors
        if self.keys.shape != self.labels.shape:
            raise ShapeError("keys and labels differ in length")

    def __len__(self):
        return int(self.keys.size)

    def __eq__(self, other):
        if not isinstance(other, ShardAssignment):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.num_shards == other.num_shards
            and self.capacity == other.capacity
            and self.seed == other.seed
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    @property
    def shards(self) -> list[list[tuple[int, int]]]:
        users, items = self.keys // self.num_items, self.keys % self.num_items
        out = [[] for _ in range(self.num_shards)]
        for u, v, s in zip(users.tolist(), items.tolist(), self.labels.tolist()):
            out[s].append((u, v))
        return out

    def member_of(self, y) -> int:
        return locate_shard(self, y)

    def shard_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_shards)

    def unit_counts(self) -> np.ndarray:
        """Members per shard in the strategy's counting unit."""
        if self.kind == "user":
            unit = self.keys // self.num_items
        elif self.kind == "item":
            unit = self.keys % self.num_items
        else:
            return self.shard_sizes()
        pairs = np.unique(np.column_stack([self.labels, unit]), axis=0)
        return np.bincount(pairs[:, 0], minlength=self.num_shards)

    def shard_data(self, train: Dataset, shard: int) -> Dataset:
        """Interactions of ``train`` placed in ``shard``.

        Interactions of ``train`` that the assignment does not know about
        are an error; ones it knows but ``train`` lacks (deleted) are skipped.
        """
        pos = np.searchsorted(self.keys, train.keys)
        pos = np.minimum(pos, self.keys.size - 1)
        if not np.array_equal(self.keys[pos], train.keys):
            raise NotFoundError("training data contains interactions missing from the assignment")
        return train.subset(self.labels[pos] == shard)

    def save(self, path):
        """Text format: header ``kind K t seed`` then ``user\\titem\\tshard``."""
        users, items = self.keys // self.num_items, self.keys % self.num_items
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.kind} {self.num_shards} {self.capacity} {self.seed}\n")
            np.savetxt(fh, np.column_stack([users, items, self.labels]), fmt="%d", delimiter="\t")

    @classmethod
    def load(cls, path, num_items: int) -> "ShardAssignment":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 4:
                raise ParseError("expected header 'kind K t seed'", path, 1)
            kind, k, t, seed = header[0], int(header[1]), int(header[2]), int(header[3])
            rows = []
            for lineno, line in enumerate(fh, 2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3:
                    raise ParseError("expected 'user<TAB>item<TAB>shard'", path, lineno)
                try:
                    rows.append([int(p) for p in parts])
                except ValueError:
                    raise ParseError(f"non-integer field in {line.strip()!r}", path, lineno) from None
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        keys = arr[:, 0] * num_items + arr[:, 1]
        order = np.argsort(keys, kind="stable")
        if arr.size and (arr[:, 2].min() < 0 or arr[:, 2].max() >= k):
            raise ParseError("shard index out of range", path)
        return cls(kind, k, t, seed, keys[order], arr[order, 2], num_items)


def locate_shard(assignment: ShardAssignment, y) -> int:
    """Shard index holding interaction ``y``."""
    key = int(y[0]) * assignment.num_items + int(y[1])
    if not (0 <= int(y[1]) < assignment.num_items):
        raise NotFoundError(f"interaction {tuple(y)} was not partitioned")
    pos = int(np.searchsorted(assignment.keys, key))
    if pos >= assignment.keys.size or assignment.keys[pos] != key:
        raise NotFoundError(f"interaction {tuple(int(a) for a in y)} was not partitioned")
    return int(assignment.labels[pos])


# -- distances ----------------------------------------------------------------


def user_distance(anchor_center, user_vec) -> float:
    a = np.asarray(anchor_center, dtype=np.float64)
    b = np.asarray(user_vec, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def interaction_distance(anchor, user_vec, item_vec, combine: str = "product") -> float:
    """Distance between an anchor ``(user_center, item_center)`` and an interaction."""
    du = user_distance(anchor[0], user_vec)
    dv = user_distance(anchor[1], item_vec)
    return du * dv if combine == "product" else du + dv


# -- greedy balanced assignment ----------------------------------------------


def greedy_assign(dist: np.ndarray, capacity: int) -> np.ndarray:
    """Scan all (anchor, unit) pairs by ascending distance, assigning each
    unassigned unit to the anchor when that shard has room.

    Ties are broken by anchor index, then unit index. Rather than walking the
    K*N pairs one by one, the scan is replayed in at most K vectorized
    rounds: between two moments where some shard fills up, every unit simply
    lands on its nearest still-open shard.
    """
    k, n = dist.shape
    if capacity * k < n:
        raise CapacityError(f"capacity {capacity} x {k} shards cannot hold {n} units")
    labels = np.full(n, -1, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    open_ = np.ones(k, dtype=bool)
    pending = np.arange(n)
    none = np.iinfo(np.int64).max
    while pending.size:
        shard_ids = np.flatnonzero(open_)
        sub = dist[np.ix_(shard_ids, pending)]
        local = sub.argmin(axis=0)
        first = sub[local, np.arange(pending.size)]
        choice = shard_ids[local]
        # pending is ascending, so the stable sort keeps unit order on ties
        seq = np.lexsort((choice, first))
        seq_choice = choice[seq]
        fill_at = np.full(k, none, dtype=np.int64)
        for s in shard_ids:
            hits = np.flatnonzero(seq_choice == s)
            need = capacity - counts[s]
            if hits.size >= need:
                fill_at[s] = hits[need - 1]
        closing = int(fill_at.argmin())
        stop = fill_at[closing]
        take = seq if stop == none else seq[: stop + 1]
        labels[pending[take]] = choice[take]
        counts += np.bincount(choice[take], minlength=k)
        if stop == none:
            break
        open_[closing] = False
        rest = np.ones(pending.size, dtype=bool)
        rest[take] = False
        pending = pending[rest]
    return labels


def _member_means(labels, unit_ids, vecs, previous):
    """Mean embedding of each shard's members; empty shards keep their anchor.

    Member ``j`` of the scan has embedding ``vecs[unit_ids[j]]``; the sums are
    taken through a K x rows count matrix so the gathered points are never
    materialized.
    """
    k = previous.shape[0]
    rows = vecs.shape[0]
    tally = np.bincount(labels * rows + unit_ids, minlength=k * rows).reshape(k, rows)
    sizes = tally.sum(axis=1)
    out = previous.copy()
    nonempty = sizes > 0
    out[nonempty] = (tally[nonempty] @ vecs) / sizes[nonempty, None]
    return out


def _initial(anchors, k, d):
    arr = np.array(anchors, dtype=np.float64)
    if arr.shape != (k, d):
        raise ShapeError(f"initial anchors must have shape {(k, d)}, got {arr.shape}")
    return arr


def _balanced_kmeans(dist_fn, members, init_centers, capacity, cfg: PartitionConfig):
    """Alternate greedy assignment and mean updates until anchors settle.

    ``members`` pairs each anchor component with ``(unit_ids, vecs)``.
    """
    centers = init_centers
    labels = None
    for it in range(1, cfg.max_iterations + 1):
        labels = greedy_assign(dist_fn(centers), capacity)
        new_centers = tuple(
            _member_means(labels, ids, vecs, c) for (ids, vecs), c in zip(members, centers)
        )
        shift = max(float(np.max(np.linalg.norm(n - c, axis=1))) for n, c in zip(new_centers, centers))
        centers = new_centers
        _logger.debug("partition iteration %d: max anchor shift %.3g", it, shift)
        if shift < cfg.tolerance:
            break
    return labels, centers, it


def _group_partition(train, vecs, unit_of, kind, cfg: PartitionConfig, anchors=None):
    units = np.unique(unit_of)
    capacity = cfg.capacity_for(units.size)
    rng = np.random.default_rng(cfg.seed)
    k = cfg.num_shards
    if k > units.size:
        raise CapacityError(f"{k} shards but only {units.size} {kind}s")
    points = vecs[units]
    if anchors is None:
        init = points[rng.choice(units.size, size=k, replace=False)].copy()
    else:
        init = _initial(anchors, k, vecs.shape[1])
    labels, centers, iters = _balanced_kmeans(
        lambda c: cdist(c[0], points), [(units, vecs)], (init,), capacity, cfg
    )
    unit_label = np.full(vecs.shape[0], -1, dtype=np.int64)
    unit_label[units] = labels
    anchors = Anchors(kind, centers[0] if kind == "user" else None, centers[0] if kind == "item" else None)
    return ShardAssignment(
        kind, k, capacity, cfg.seed, train.keys, unit_label[unit_of], train.num_items, iters, anchors
    )


def ubp_partition(train: Dataset, emb: PretrainedEmbeddings, cfg: PartitionConfig, anchors=None) -> ShardAssignment:
    """User-based balanced partition; capacity counts users.

    ``anchors`` optionally fixes the K initial centers instead of sampling
    K distinct users.
    """
    emb.check(train)
    return _group_partition(train, emb.user_vecs, train.users, "user", cfg, anchors)


def ibp_partition(train: Dataset, emb: PretrainedEmbeddings, cfg: PartitionConfig, anchors=None) -> ShardAssignment:
    """Item-based balanced partition; capacity counts items."""
    emb.check(train)
    return _group_partition(train, emb.item_vecs, train.items, "item", cfg, anchors)


def inbp_partition(train: Dataset, emb: PretrainedEmbeddings, cfg: PartitionConfig, anchors=None) -> ShardAssignment:
    """Interaction-based balanced partition; capacity counts interactions.

    ``anchors`` optionally gives the initial ``(user_centers, item_centers)``.
    """
    emb.check(train)
    n = len(train)
    capacity = cfg.capacity_for(n)
    k = cfg.num_shards
    if k > n:
        raise CapacityError(f"{k} shards but only {n} interactions")
    rng = np.random.default_rng(cfg.seed)
    users, items = train.users, train.items
    if anchors is None:
        picks = rng.choice(n, size=k, replace=False)
        init = (emb.user_vecs[users[picks]].copy(), emb.item_vecs[items[picks]].copy())
    else:
        init = (_initial(anchors[0], k, emb.dim), _initial(anchors[1], k, emb.dim))

    def dist_fn(centers):
        # distances per distinct user/item, then gathered per interaction
        du = cdist(centers[0], emb.user_vecs)
        dv = cdist(centers[1], emb.item_vecs)
        if cfg.combine == "product":
            return du[:, users] * dv[:, items]
        return du[:, users] + dv[:, items]

    members = [(users, emb.user_vecs), (items, emb.item_vecs)]
    labels, centers, iters = _balanced_kmeans(dist_fn, members, init, capacity, cfg)
    anchors = Anchors("interaction", centers[0], centers[1])
    return ShardAssignment("interaction", k, capacity, cfg.seed, train.keys, labels, train.num_items, iters, anchors)


def random_partition(train: Dataset, cfg: PartitionConfig) -> ShardAssignment:
    """Shuffle under ``cfg.seed`` and deal interactions round-robin."""
    n = len(train)
    k = cfg.num_shards
    capacity = cfg.capacity_for(n)
    perm = np.random.default_rng(cfg.seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % k
    return ShardAssignment("random", k, capacity, cfg.seed, train.keys, labels, train.num_items)


def partition(strategy: str, train: Dataset, emb: PretrainedEmbeddings | None, cfg: PartitionConfig) -> ShardAssignment:
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown partition strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "random":
        return random_partition(train, cfg)
    if emb is None:
        raise ConfigError(f"strategy {strategy!r} needs pretrained embeddings")
    return {"ubp": ubp_partition, "ibp": ibp_partition, "inbp": inbp_partition}[strategy](train, emb, cfg)
