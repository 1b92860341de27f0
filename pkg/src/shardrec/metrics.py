"""Full-ranking Top-N evaluation: Recall@N and NDCG@N with binary gain."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dataset import Dataset
from .errors import EmptyDatasetError

DEFAULT_CUTOFFS = (10, 20, 50)


class NoRelevantItems(ValueError):
    """The user has no held-out items; such users are left out of averages."""


def rank_items(scores, exclude=()) -> np.ndarray:
    """All items not in ``exclude``, by score descending, ties by item index."""
    scores = np.asarray(scores)
    keep = np.ones(scores.shape[0], dtype=bool)
    keep[np.asarray(list(exclude), dtype=np.int64)] = False
    idx = np.flatnonzero(keep)
    order = np.lexsort((idx, -scores[idx]))
    return idx[order]


def recall_at_n(ranked, relevant, n: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise NoRelevantItems("empty relevant set")
    hits = sum(1 for item in list(ranked)[:n] if item in relevant)
    return hits / len(relevant)


def _idcg(count: int) -> float:
    return float(np.sum(1.0 / np.log2(np.arange(2, count + 2))))


def ndcg_at_n(ranked, relevant, n: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise NoRelevantItems("empty relevant set")
    dcg = sum(1.0 / np.log2(r + 2) for r, item in enumerate(list(ranked)[:n]) if item in relevant)
    return float(dcg / _idcg(min(len(relevant), n)))


@dataclass
class MetricBundle:
    recall: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)
    num_users_evaluated: int = 0

    def lines(self) -> str:
        out = []
        for name, table in (("recall", self.recall), ("ndcg", self.ndcg)):
            for cutoff in sorted(table):
                out.append(f"{name}\t{cutoff}\t{table[cutoff]:.6f}")
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "num_users_evaluated": self.num_users_evaluated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "MetricBundle":
        return cls(
            {int(k): float(v) for k, v in d["recall"].items()},
            {int(k): float(v) for k, v in d["ndcg"].items()},
            int(d["num_users_evaluated"]),
        )


@njit(cache=True)
def _top_n_kernel(scores, n, out):
    rows, cols = scores.shape
    best = np.empty(n, dtype=scores.dtype)
    for r in range(rows):
        filled = 0
        floor = -np.inf
        for j in range(cols):
            s = scores[r, j]
            # one comparison rejects -inf, nan and anything not beating the
            # current n-th score; columns arrive in index order, so an equal
            # score never displaces
            if not (s > floor):
                continue
            pos = filled if filled < n else n - 1
            while pos > 0 and best[pos - 1] < s:
                best[pos] = best[pos - 1]
                out[r, pos] = out[r, pos - 1]
                pos -= 1
            best[pos] = s
            out[r, pos] = j
            if filled < n:
                filled += 1
            if filled == n:
                floor = best[n - 1]
        for k in range(filled, n):
            out[r, k] = -1


def top_n_block(scores: np.ndarray, n: int) -> np.ndarray:
    """Row-wise top-``n`` column indices of a score block, best first.

    Ordering is score descending, then column index ascending, matching
    :func:`rank_items`. ``-inf`` marks excluded entries; rows with fewer than
    ``n`` finite entries are padded with ``-1``.
    """
    scores = np.ascontiguousarray(scores)
    rows, cols = scores.shape
    n = min(n, cols)
    out = np.empty((rows, n), dtype=np.int64)
    if n and rows:
        _top_n_kernel(scores, n, out)
    return out


def _score_users(model, users: np.ndarray) -> np.ndarray:
    scores = model.score_users(users)
    # exclusions are written in place, so only a freshly allocated float32
    # block may be used as is
    if isinstance(scores, np.ndarray) and scores.dtype == np.float32 and scores.flags.owndata:
        return scores
    return np.array(scores, dtype=np.float32)


def evaluate(
    model,
    train: Dataset,
    test: Dataset,
    cutoffs=DEFAULT_CUTOFFS,
    users=None,
    block_size: int = 1024,
) -> MetricBundle:
    """Average Recall/NDCG over users with a nonempty test set.

    ``model`` needs ``score_users(user_indices) -> (len, n)`` returning a
    new array on every call (it may be overwritten); training
    positives are excluded from each user's ranking. ``users`` optionally
    restricts which users are considered.
    """
    if len(test) == 0:
        raise EmptyDatasetError("empty test set")
    cutoffs = sorted(set(int(c) for c in cutoffs))
    test_csr = test.user_csr
    train_csr = train.user_csr
    candidates = np.flatnonzero(np.diff(test_csr.indptr) > 0)
    if users is not None:
        candidates = np.intersect1d(candidates, np.asarray(users, dtype=np.int64))
    recall_sum = np.zeros(len(cutoffs))
    ndcg_sum = np.zeros(len(cutoffs))
    max_n = cutoffs[-1]
    discounts = 1.0 / np.log2(np.arange(2, max_n + 2))
    ideal = np.concatenate([[0.0], np.cumsum(discounts)])
    for start in range(0, candidates.size, block_size):
        block = candidates[start : start + block_size]
        scores = _score_users(model, block)
        excl = train_csr[block]
        rows = np.repeat(np.arange(block.size), np.diff(excl.indptr))
        scores[rows, excl.indices] = -np.inf
        top = top_n_block(scores, max_n)
        rel = test_csr[block]
        rel_dense = np.zeros(scores.shape, dtype=bool)
        rel_rows = np.repeat(np.arange(block.size), np.diff(rel.indptr))
        rel_dense[rel_rows, rel.indices] = True
        valid = top >= 0
        hits = np.zeros(top.shape, dtype=bool)
        hits[valid] = rel_dense[np.nonzero(valid)[0], top[valid]]
        n_rel = np.diff(rel.indptr)
        cum_hits = np.cumsum(hits, axis=1)
        cum_dcg = np.cumsum(hits * discounts[: top.shape[1]], axis=1)
        for j, c in enumerate(cutoffs):
            k = min(c, top.shape[1])
            recall_sum[j] += np.sum(cum_hits[:, k - 1] / n_rel)
            ndcg_sum[j] += np.sum(cum_dcg[:, k - 1] / ideal[np.minimum(n_rel, c)])
    count = int(candidates.size)
    if count == 0:
        raise EmptyDatasetError("no user with held-out items to evaluate")
    return MetricBundle(
        {c: float(recall_sum[j] / count) for j, c in enumerate(cutoffs)},
        {c: float(ndcg_sum[j] / count) for j, c in enumerate(cutoffs)},
        count,
    )
