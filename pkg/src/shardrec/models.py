"""Inner-product collaborative filtering models: BPR, WMF and LightGCN.

All three train with mini-batch Adagrad on plain numpy arrays and produce an
:class:`EmbeddingTable`; scores are ``p_u . q_v``. Losses and gradients are
exposed as functions so they can be checked against finite differences.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from numba import njit

from .dataset import Dataset
from .errors import CheckpointError, ConfigError, ShapeError, TrainingError
from .metrics import evaluate

_logger = logging.getLogger(__name__)

MODELS = ("bpr", "wmf", "lightgcn")
ADAGRAD_EPS = 1e-10


class EmbeddingTable:
    """User matrix ``P`` (m x d) and item matrix ``Q`` (n x d)."""

    def __init__(self, user_vecs, item_vecs):
        user_vecs = np.asarray(user_vecs)
        item_vecs = np.asarray(item_vecs)
        if user_vecs.ndim != 2 or item_vecs.ndim != 2 or user_vecs.shape[1] != item_vecs.shape[1]:
            raise ShapeError(
                f"inconsistent embedding shapes {user_vecs.shape} and {item_vecs.shape}"
            )
        self.user_vecs = user_vecs
        self.item_vecs = item_vecs

    @property
    def dim(self) -> int:
        return self.user_vecs.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_vecs.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_vecs.shape[0]

    def score(self, u: int, v: int) -> float:
        if not (0 <= u < self.num_users) or not (0 <= v < self.num_items):
            raise IndexError(f"({u}, {v}) outside a {self.num_users} x {self.num_items} table")
        return float(self.user_vecs[u] @ self.item_vecs[v])

    def score_users(self, users) -> np.ndarray:
        return self.user_vecs[users] @ self.item_vecs.T

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.user_vecs.copy(), self.item_vecs.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_vecs).all() and np.isfinite(self.item_vecs).all())

    def equals(self, other: "EmbeddingTable") -> bool:
        return np.array_equal(self.user_vecs, other.user_vecs) and np.array_equal(
            self.item_vecs, other.item_vecs
        )

    def __repr__(self):
        return f"EmbeddingTable(m={self.num_users}, n={self.num_items}, d={self.dim})"


def score(table: EmbeddingTable, u: int, v: int) -> float:
    return table.score(u, v)


@dataclass
class TrainConfig:
    model: str = "bpr"
    dim: int = 64
    learning_rate: float = 0.05
    batch_size: int = 512
    max_epochs: int = 1000
    early_stop_patience: int = 10
    l2_reg: float = 1e-4
    negative_weight: float = 0.05
    num_layers: int = 2
    init_std: float = 0.01
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.dim < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("dim, batch_size and max_epochs must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.l2_reg < 0 or self.negative_weight < 0 or self.num_layers < 0:
            raise ConfigError("l2_reg, negative_weight and num_layers must be nonnegative")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))


@dataclass
class TrainHistory:
    val_recall: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0


# -- Adagrad ------------------------------------------------------------------


def sum_rows(index: np.ndarray, grads: np.ndarray):
    """Sum gradient rows sharing an index; returns ``(unique_index, sums)``."""
    order = np.argsort(index, kind="stable")
    sorted_index = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_index[1:] != sorted_index[:-1]])
    return sorted_index[starts], np.add.reduceat(grads[order], starts, axis=0)


def adagrad_rows(param, accum, rows, grad, lr):
    """Adagrad update of the given (unique) rows of ``param``."""
    acc = accum[rows] + grad * grad
    accum[rows] = acc
    param[rows] -= lr * grad / (np.sqrt(acc) + ADAGRAD_EPS)


def adagrad_dense(param, accum, grad, lr):
    accum += grad * grad
    param -= lr * grad / (np.sqrt(accum) + ADAGRAD_EPS)


# -- sampling -----------------------------------------------------------------


def sample_negatives(data: Dataset, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform items the given users have not interacted with in ``data``.

    Users whose rows are full have no negatives; callers drop them first.
    """
    neg = rng.integers(0, data.num_items, size=users.size)
    bad = np.flatnonzero(data.contains_many(users, neg))
    while bad.size:
        neg[bad] = rng.integers(0, data.num_items, size=bad.size)
        bad = bad[data.contains_many(users[bad], neg[bad])]
    return neg


def bpr_triples(data: Dataset, rng: np.random.Generator):
    """One epoch of shuffled ``(user, positive, negative)`` triples."""
    full = data.user_degrees() >= data.num_items
    usable = np.flatnonzero(~full[data.users])
    order = usable[rng.permutation(usable.size)]
    users = data.users[order]
    pos = data.items[order]
    return users, pos, sample_negatives(data, users, rng)


# -- BPR ----------------------------------------------------------------------


def _log_sigmoid_neg(x):
    return np.logaddexp(0.0, -x)


def bpr_loss(P, Q, users, pos, neg, l2=0.0) -> float:
    """``sum -ln sigmoid(p_u.q_i - p_u.q_j) + l2 (|p_u|^2 + |q_i|^2 + |q_j|^2)``."""
    pu, qi, qj = P[users], Q[pos], Q[neg]
    x = np.einsum("bd,bd->b", pu, qi - qj)
    reg = np.sum(pu * pu) + np.sum(qi * qi) + np.sum(qj * qj)
    return float(np.sum(_log_sigmoid_neg(x)) + l2 * reg)


def bpr_row_grads(pu, qi, qj, l2):
    """Per-triple gradients ``(d/dp_u, d/dq_i, d/dq_j)`` and the batch loss."""
    diff = qi - qj
    x = np.einsum("bd,bd->b", pu, diff)
    s = expit(-x)[:, None].astype(pu.dtype, copy=False)
    gu = -s * diff + (2 * l2) * pu
    gi = -s * pu + (2 * l2) * qi
    gj = s * pu + (2 * l2) * qj
    loss = float(np.sum(_log_sigmoid_neg(x)))
    return gu, gi, gj, loss


def bpr_gradients(P, Q, users, pos, neg, l2=0.0):
    """Dense gradients of :func:`bpr_loss` with respect to ``P`` and ``Q``."""
    gu, gi, gj, _ = bpr_row_grads(P[users], Q[pos], Q[neg], l2)
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, users, gu)
    np.add.at(gQ, pos, gi)
    np.add.at(gQ, neg, gj)
    return gP, gQ


@njit(cache=True)
def _bpr_epoch_kernel(P, Q, aP, aQ, users, pos, neg, batch_size, lr, l2, bufP, bufQ):
    n = users.shape[0]
    d = P.shape[1]
    touched_u = np.empty(batch_size, np.int64)
    touched_i = np.empty(2 * batch_size, np.int64)
    seen_u = np.zeros(P.shape[0], np.bool_)
    seen_i = np.zeros(Q.shape[0], np.bool_)
    total = 0.0
    reg = P.dtype.type(2.0 * l2)
    step = P.dtype.type(lr)
    eps = P.dtype.type(1e-10)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        nu = 0
        ni = 0
        for b in range(start, stop):
            u = users[b]
            i = pos[b]
            j = neg[b]
            x = 0.0
            for k in range(d):
                x += P[u, k] * (Q[i, k] - Q[j, k])
            if x >= 0:
                total += np.log1p(np.exp(-x))
            else:
                total += -x + np.log1p(np.exp(x))
            s = P.dtype.type(1.0 / (1.0 + np.exp(x)))
            for k in range(d):
                pu = P[u, k]
                qi = Q[i, k]
                qj = Q[j, k]
                bufP[u, k] += -s * (qi - qj) + reg * pu
                bufQ[i, k] += -s * pu + reg * qi
                bufQ[j, k] += s * pu + reg * qj
            if not seen_u[u]:
                seen_u[u] = True
                touched_u[nu] = u
                nu += 1
            if not seen_i[i]:
                seen_i[i] = True
                touched_i[ni] = i
                ni += 1
            if not seen_i[j]:
                seen_i[j] = True
                touched_i[ni] = j
                ni += 1
        for t in range(nu):
            r = touched_u[t]
            for k in range(d):
                g = bufP[r, k]
                aP[r, k] += g * g
                P[r, k] -= step * g / (np.sqrt(aP[r, k]) + eps)
                bufP[r, k] = 0.0
            seen_u[r] = False
        for t in range(ni):
            r = touched_i[t]
            for k in range(d):
                g = bufQ[r, k]
                aQ[r, k] += g * g
                Q[r, k] -= step * g / (np.sqrt(aQ[r, k]) + eps)
                bufQ[r, k] = 0.0
            seen_i[r] = False
    return total


def bpr_epoch(P, Q, aP, aQ, users, pos, neg, batch_size, lr, l2, bufP=None, bufQ=None) -> float:
    """One pass of mini-batch Adagrad over the given triples, in place.

    Gradients within a batch are taken at the pre-batch parameters and
    summed per row before the update. Returns the summed BPR loss (without
    the L2 term).
    """
    bufP = np.zeros_like(P) if bufP is None else bufP
    bufQ = np.zeros_like(Q) if bufQ is None else bufQ
    return float(
        _bpr_epoch_kernel(
            P, Q, aP, aQ,
            np.ascontiguousarray(users, dtype=np.int64),
            np.ascontiguousarray(pos, dtype=np.int64),
            np.ascontiguousarray(neg, dtype=np.int64),
            int(batch_size), float(lr), float(l2), bufP, bufQ,
        )
    )


# -- WMF ----------------------------------------------------------------------


def _active(data: Dataset, users=None):
    active_users = data.active_users() if users is None else np.asarray(users, dtype=np.int64)
    return active_users, data.active_items()


def wmf_loss(P, Q, data: Dataset, c0: float, l2: float = 0.0, users=None) -> float:
    """Whole-data weighted squared loss via the Gram-matrix identity.

    ``sum_obs (1 - y)^2 + c0 sum_unobs y^2`` over the active users (or the
    given ``users``) times the active items of ``data``, rewritten as
    ``sum_obs [(1 - y)^2 - c0 y^2] + c0 tr(P_B^T P_B Q^T Q)``. L2 applies to
    ``P_B`` in full and to the active ``Q`` in proportion ``|B| / m_active``
    so that user batches sum to the full objective.
    """
    batch, items = _active(data, users)
    sel = np.isin(data.users, batch)
    u, v = data.users[sel], data.items[sel]
    y = np.einsum("bd,bd->b", P[u], Q[v])
    Qa = Q[items]
    Pb = P[batch]
    gram = c0 * np.sum((Pb.T @ Pb) * (Qa.T @ Qa))
    obs = np.sum((1.0 - y) ** 2 - c0 * y**2)
    share = batch.size / max(data.active_users().size, 1)
    reg = l2 * (np.sum(Pb * Pb) + share * np.sum(Qa * Qa))
    return float(obs + gram + reg)


def wmf_loss_naive(P, Q, data: Dataset, c0: float, l2: float = 0.0, users=None) -> float:
    """Brute-force version of :func:`wmf_loss` over the full score block."""
    batch, items = _active(data, users)
    pred = P[batch] @ Q[items].T
    observed = data.user_csr[batch][:, items].toarray() > 0
    weights = np.where(observed, 1.0, c0)
    target = observed.astype(pred.dtype)
    share = batch.size / max(data.active_users().size, 1)
    reg = l2 * (np.sum(P[batch] ** 2) + share * np.sum(Q[items] ** 2))
    return float(np.sum(weights * (target - pred) ** 2) + reg)


def wmf_gradients(P, Q, data: Dataset, c0: float, l2: float = 0.0, users=None):
    """Dense gradients of :func:`wmf_loss`, O(|Y_B| d + (|B| + n) d^2)."""
    batch, items = _active(data, users)
    sel = np.isin(data.users, batch)
    u, v = data.users[sel], data.items[sel]
    pu, qv = P[u], Q[v]
    y = np.einsum("bd,bd->b", pu, qv)
    coef = (-2.0 * (1.0 - y) - 2.0 * c0 * y)[:, None].astype(P.dtype, copy=False)
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, u, coef * qv)
    np.add.at(gQ, v, coef * pu)
    Pb, Qa = P[batch], Q[items]
    share = batch.size / max(data.active_users().size, 1)
    gP[batch] += (2 * c0) * Pb @ (Qa.T @ Qa) + (2 * l2) * Pb
    gQ[items] += (2 * c0) * Qa @ (Pb.T @ Pb) + (2 * l2 * share) * Qa
    return gP, gQ


def wmf_gradients_naive(P, Q, data: Dataset, c0: float, l2: float = 0.0, users=None):
    """Brute-force gradients from the full weighted residual block."""
    batch, items = _active(data, users)
    pred = P[batch] @ Q[items].T
    observed = data.user_csr[batch][:, items].toarray() > 0
    weights = np.where(observed, 1.0, c0)
    resid = -2.0 * weights * (observed - pred)
    share = batch.size / max(data.active_users().size, 1)
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    gP[batch] = resid @ Q[items] + 2 * l2 * P[batch]
    gQ[items] = resid.T @ P[batch] + 2 * l2 * share * Q[items]
    return gP, gQ


# -- LightGCN -----------------------------------------------------------------


def normalized_adjacency(data: Dataset) -> sp.csr_matrix:
    """``D_u^{-1/2} R D_i^{-1/2}``, the user-item block of the normalized graph."""
    du = data.user_degrees().astype(np.float64)
    di = data.item_degrees().astype(np.float64)
    with np.errstate(divide="ignore"):
        su = np.where(du > 0, du**-0.5, 0.0)
        si = np.where(di > 0, di**-0.5, 0.0)
    vals = su[data.users] * si[data.items]
    return sp.csr_matrix((vals, (data.users, data.items)), shape=(data.num_users, data.num_items))


def propagate(norm_adj: sp.csr_matrix, user_emb, item_emb, num_layers: int):
    """Layer-mean of LightGCN propagation over the bipartite graph.

    Linear and symmetric, so the same call also maps output gradients back
    to base-embedding gradients.
    """
    adj = norm_adj.astype(user_emb.dtype, copy=False)
    adj_t = adj.T.tocsr()
    eu, ei = user_emb, item_emb
    su, si = eu.copy(), ei.copy()
    for _ in range(num_layers):
        eu, ei = adj @ ei, adj_t @ eu
        su += eu
        si += ei
    scale = 1.0 / (num_layers + 1)
    return su * scale, si * scale


# -- training loop ------------------------------------------------------------


def _init_table(data: Dataset, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    dtype = np.dtype(cfg.dtype)
    P = (rng.standard_normal((data.num_users, cfg.dim)) * cfg.init_std).astype(dtype)
    Q = (rng.standard_normal((data.num_items, cfg.dim)) * cfg.init_std).astype(dtype)
    return P, Q


def _check_train(data: Dataset):
    if len(data) == 0:
        raise TrainingError("training data has no interactions")


def _fit(data, cfg, val, epoch_fn, table_fn, history=None):
    """Shared epoch loop with validation Recall@10 early stopping.

    ``epoch_fn(epoch)`` performs one pass and returns the summed loss;
    ``table_fn()`` returns the current scoring table.
    """
    history = history if history is not None else TrainHistory()
    val_users = None
    if val is not None and len(val):
        val_users = np.intersect1d(data.active_users(), val.active_users())
        if val_users.size == 0:
            val_users = None
    best, best_recall, stale = None, -np.inf, 0
    for epoch in range(cfg.max_epochs):
        loss = epoch_fn(epoch)
        history.losses.append(loss)
        history.epochs_run = epoch + 1
        table = table_fn()
        if not table.is_finite():
            raise TrainingError(f"non-finite parameters after epoch {epoch}")
        if val_users is None:
            continue
        recall = evaluate(table, data, val, cutoffs=(10,), users=val_users).recall[10]
        history.val_recall.append(recall)
        _logger.debug("epoch %d loss %.4f val recall@10 %.4f", epoch, loss, recall)
        if recall > best_recall:
            best_recall, best, stale = recall, table.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    if best is None:
        best = table_fn().copy()
        history.best_epoch = history.epochs_run - 1
    return best


def train_bpr(train: Dataset, cfg: TrainConfig, val: Dataset | None = None, history=None) -> EmbeddingTable:
    """Matrix factorization under the BPR pairwise loss."""
    _check_train(train)
    rng = np.random.default_rng(cfg.seed)
    P, Q = _init_table(train, cfg, rng)
    aP, aQ = np.zeros_like(P), np.zeros_like(Q)
    bufP, bufQ = np.zeros_like(P), np.zeros_like(Q)

    def epoch_fn(epoch):
        users, pos, neg = bpr_triples(train, rng)
        return bpr_epoch(P, Q, aP, aQ, users, pos, neg, cfg.batch_size, cfg.learning_rate, cfg.l2_reg, bufP, bufQ)

    return _fit(train, cfg, val, epoch_fn, lambda: EmbeddingTable(P, Q), history)


def train_wmf(train: Dataset, cfg: TrainConfig, val: Dataset | None = None, history=None) -> EmbeddingTable:
    """Non-sampling weighted MF: every unobserved pair is a negative of weight c0."""
    _check_train(train)
    rng = np.random.default_rng(cfg.seed)
    P, Q = _init_table(train, cfg, rng)
    aP, aQ = np.zeros_like(P), np.zeros_like(Q)
    users_all = train.active_users()
    items = train.active_items()
    csr = train.user_csr
    n_active = users_all.size
    c0, l2, lr, bs = cfg.negative_weight, cfg.l2_reg, cfg.learning_rate, cfg.batch_size

    def epoch_fn(epoch):
        order = users_all[rng.permutation(users_all.size)]
        total = 0.0
        for s in range(0, order.size, bs):
            batch = np.sort(order[s : s + bs])
            sub = csr[batch]
            u = np.repeat(batch, np.diff(sub.indptr))
            v = sub.indices
            pu, qv = P[u], Q[v]
            y = np.einsum("bd,bd->b", pu, qv)
            coef = (-2.0 * (1.0 - y) - 2.0 * c0 * y)[:, None].astype(P.dtype)
            Pb, Qa = P[batch], Q[items]
            gram_q = Qa.T @ Qa
            gram_p = Pb.T @ Pb
            share = batch.size / n_active
            total += float(
                np.sum((1.0 - y) ** 2 - c0 * y**2)
                + c0 * np.sum(gram_p * gram_q)
                + l2 * (np.sum(Pb * Pb) + share * np.sum(Qa * Qa))
            )
            rows, gu = sum_rows(u, coef * qv)
            gP = (2 * c0) * Pb @ gram_q + (2 * l2) * Pb
            gP[np.searchsorted(batch, rows)] += gu
            gQ = (2 * c0) * Qa @ gram_p + (2 * l2 * share) * Qa
            rows, gv = sum_rows(v, coef * pu)
            gQ[np.searchsorted(items, rows)] += gv
            adagrad_rows(P, aP, batch, gP, lr)
            adagrad_rows(Q, aQ, items, gQ, lr)
        return total

    return _fit(train, cfg, val, epoch_fn, lambda: EmbeddingTable(P, Q), history)


def train_lightgcn(train: Dataset, cfg: TrainConfig, val: Dataset | None = None, history=None) -> EmbeddingTable:
    """BPR on LightGCN-propagated embeddings; returns the propagated table.

    With ``num_layers == 0`` this is exactly :func:`train_bpr`.
    """
    _check_train(train)
    if cfg.num_layers == 0:
        return train_bpr(train, replace(cfg, model="bpr"), val, history)
    rng = np.random.default_rng(cfg.seed)
    E_u, E_i = _init_table(train, cfg, rng)
    aU, aI = np.zeros_like(E_u), np.zeros_like(E_i)
    adj = normalized_adjacency(train)
    L, lr, l2, bs = cfg.num_layers, cfg.learning_rate, cfg.l2_reg, cfg.batch_size

    def epoch_fn(epoch):
        users, pos, neg = bpr_triples(train, rng)
        total = 0.0
        for s in range(0, users.size, bs):
            u, i, j = users[s : s + bs], pos[s : s + bs], neg[s : s + bs]
            Fu, Fi = propagate(adj, E_u, E_i, L)
            gu, gi, gj, loss = bpr_row_grads(Fu[u], Fi[i], Fi[j], 0.0)
            total += loss
            Gu = np.zeros_like(E_u)
            Gi = np.zeros_like(E_i)
            rows, g = sum_rows(u, gu)
            Gu[rows] = g
            rows, g = sum_rows(np.concatenate([i, j]), np.concatenate([gi, gj]))
            Gi[rows] = g
            Gu, Gi = propagate(adj, Gu, Gi, L)
            # L2 on the base embeddings of the batch rows
            rows_u = np.unique(u)
            rows_i = np.unique(np.concatenate([i, j]))
            Gu[rows_u] += (2 * l2) * E_u[rows_u]
            Gi[rows_i] += (2 * l2) * E_i[rows_i]
            total += l2 * float(np.sum(E_u[rows_u] ** 2) + np.sum(E_i[rows_i] ** 2))
            adagrad_dense(E_u, aU, Gu, lr)
            adagrad_dense(E_i, aI, Gi, lr)
        return total

    def table_fn():
        return EmbeddingTable(*propagate(adj, E_u, E_i, L))

    return _fit(train, cfg, val, epoch_fn, table_fn, history)


def train_model(train: Dataset, cfg: TrainConfig, val: Dataset | None = None, history=None) -> EmbeddingTable:
    trainer = {"bpr": train_bpr, "wmf": train_wmf, "lightgcn": train_lightgcn}[cfg.model]
    return trainer(train, cfg, val, history)


def pretrain_for_partition(train: Dataset, cfg: TrainConfig, val: Dataset | None = None):
    """WMF embeddings of the full training set, used to place data into shards."""
    from .partition import PretrainedEmbeddings

    table = train_wmf(train, replace(cfg, model="wmf"), val)
    return PretrainedEmbeddings(table.user_vecs, table.item_vecs)


# -- checkpoints --------------------------------------------------------------


def save_table(table: EmbeddingTable, path, model: str = "bpr", seed: int = 0, meta: dict | None = None):
    """Binary checkpoint: ASCII header line ``model d m n seed`` followed by
    the user then item matrices, row-major little-endian float32. A JSON
    sidecar ``<path>.meta`` carries free-form metadata."""
    header = f"{model} {table.dim} {table.num_users} {table.num_items} {seed}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(table.user_vecs, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(table.item_vecs, dtype="<f4").tobytes())
        with open(f"{path}.meta", "w", encoding="utf-8") as fh:
            json.dump(dict(meta or {}, model=model, seed=seed, dim=table.dim), fh, sort_keys=True)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_table_header(path):
    try:
        with open(path, "rb") as fh:
            parts = fh.readline().decode("ascii").split()
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(parts) != 5:
        raise CheckpointError(f"{path}: malformed header")
    model, d, m, n, seed = parts
    return model, int(d), int(m), int(n), int(seed)


def load_table(path) -> EmbeddingTable:
    model, d, m, n, seed = read_table_header(path)
    with open(path, "rb") as fh:
        fh.readline()
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != (m + n) * d:
        raise CheckpointError(f"{path}: expected {(m + n) * d} floats, found {raw.size}")
    P = raw[: m * d].reshape(m, d).astype(np.float32)
    Q = raw[m * d :].reshape(n, d).astype(np.float32)
    return EmbeddingTable(P, Q)


def config_dict(cfg) -> dict:
    return asdict(copy.deepcopy(cfg))
