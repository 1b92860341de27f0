"""Attention-based aggregation of K frozen submodel embedding tables.

Every shard model ``i`` contributes user rows ``p_u^i`` and item rows
``q_v^i``. A per-shard affine map ``W_i x + b_i`` moves both into a shared
space, and a small attention network scores each transferred row::

    alpha*_i(u) = h1 . relu(W1 p_tr^i(u) + b1)      alpha(u) = softmax_i alpha*(u)
    beta*_i(v)  = h2 . relu(W2 q_tr^i(v) + b2)      beta(v)  = softmax_i beta*(v)
    p_u = sum_i alpha_i(u) p_tr^i(u)                q_v = sum_i beta_i(v) q_tr^i(v)

Only the transfer and attention parameters are trained; the submodel tables
are never written to. All gradients are written out by hand.

With ``strict_operand`` the item weights are computed from the *user's*
transferred rows (so the aggregated item vector depends on the user it is
scored against); scoring then goes through :meth:`Aggregator.score_users`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .errors import CheckpointError, ConfigError, ShapeError, TrainingError
from .metrics import evaluate
from .models import (
    ADAGRAD_EPS,
    EmbeddingTable,
    TrainHistory,
    bpr_row_grads,
    bpr_triples,
    wmf_gradients,
    wmf_loss,
)

_logger = logging.getLogger(__name__)

MODES = ("attention", "mean", "static")
LOSSES = ("bpr", "wmf")
PARAM_NAMES = ("W", "b", "W1", "b1", "h1", "W2", "b2", "h2", "static_logits")
TRANSFER = ("W", "b")
ATTENTION = ("W1", "b1", "h1", "W2", "b2", "h2")


@dataclass
class AggregatorConfig:
    """Training settings for the aggregation stage.

    Kept apart from the submodel ``TrainConfig`` because the aggregator sees
    every interaction and wants far larger batches.
    """

    mode: str = "attention"
    attention_dim: int = 32
    learning_rate: float = 0.05
    batch_size: int = 65536
    max_epochs: int = 10
    early_stop_patience: int = 3
    l2_reg: float = 1e-5
    loss: str = "bpr"
    negative_weight: float = 0.05
    init_std: float = 0.01
    freeze_transfer: bool = False
    strict_operand: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown aggregation mode {self.mode!r}; expected one of {MODES}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown aggregator loss {self.loss!r}; expected one of {LOSSES}")
        if self.attention_dim < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("attention_dim, batch_size and max_epochs must be positive")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.learning_rate <= 0 or self.l2_reg < 0:
            raise ConfigError("learning_rate must be positive and l2_reg nonnegative")
        if self.strict_operand and self.loss == "wmf":
            raise ConfigError("strict_operand is only supported with the bpr loss")

    def with_seed(self, seed: int) -> "AggregatorConfig":
        return replace(self, seed=int(seed))


def loss_for_model(model: str) -> str:
    """Aggregator loss matching a base model family."""
    return "wmf" if model == "wmf" else "bpr"


# -- building blocks ----------------------------------------------------------


def softmax(logits, axis=0):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _pool(a, T):
    """``sum_i a[i, n] T[i, n]`` over the shard axis."""
    out = a[0][:, None] * T[0]
    for i in range(1, T.shape[0]):
        out += a[i][:, None] * T[i]
    return out


def scatter_rows(index, rows, size):
    """Sum ``rows`` into a (size, d) array at positions ``index``."""
    sel = sp.csr_matrix(
        (np.ones(index.size, dtype=rows.dtype), (index, np.arange(index.size))), shape=(size, index.size)
    )
    return np.asarray(sel @ rows)


def transfer_rows(X, W, b):
    """``T[i] = X[i] W[i]^T + b[i]`` for stacked rows ``X`` of shape (K, N, d)."""
    T = np.matmul(X, np.swapaxes(W, 1, 2))
    T += b[:, None, :]
    return T


def _attention_forward(T, A, c, h):
    Z = np.matmul(T, A.T)
    Z += c
    H = np.maximum(Z, 0)
    logits = H @ h
    return softmax(logits, axis=0), (Z, H)


def _attention_backward(T, A, h, weights, cache, d_weights):
    """Gradients of ``softmax(h . relu(A t + c))`` given d(loss)/d(weights)."""
    Z, H = cache
    d_logits = weights * (d_weights - np.sum(weights * d_weights, axis=0, keepdims=True))
    k = A.shape[0]
    dh = d_logits.reshape(-1) @ H.reshape(-1, k)
    dZ = (Z > 0) * h
    dZ *= d_logits[:, :, None]
    flat = dZ.reshape(-1, k)
    dA = flat.T @ T.reshape(-1, T.shape[2])
    dc = flat.sum(axis=0)
    dT = dZ @ A
    return dT, dA, dc, dh


class Aggregator:
    """Transfer + attention parameters over K frozen submodel tables."""

    def __init__(self, tables, cfg: AggregatorConfig | None = None, params: dict | None = None):
        cfg = cfg or AggregatorConfig()
        if not tables:
            raise ShapeError("aggregator needs at least one submodel table")
        dims = {(t.num_users, t.num_items, t.dim) for t in tables}
        if len(dims) != 1:
            raise ShapeError(f"submodel tables disagree on shape: {sorted(dims)}")
        self.cfg = cfg
        self.tables = list(tables)
        self.dtype = np.result_type(*[t.user_vecs.dtype for t in tables])
        self.X_user = np.stack([t.user_vecs for t in tables]).astype(self.dtype, copy=False)
        self.X_item = np.stack([t.item_vecs for t in tables]).astype(self.dtype, copy=False)
        self.X_user.setflags(write=False)
        self.X_item.setflags(write=False)
        self.params = params if params is not None else init_params(
            len(tables), tables[0].dim, cfg.attention_dim, cfg.init_std, cfg.seed, self.dtype
        )
        self._check_params()

    # shapes ------------------------------------------------------------------
    @property
    def num_shards(self) -> int:
        return self.X_user.shape[0]

    @property
    def dim(self) -> int:
        return self.X_user.shape[2]

    @property
    def mode(self) -> str:
        return self.cfg.mode

    @property
    def static_weights(self) -> np.ndarray:
        return softmax(self.params["static_logits"])

    def _check_params(self):
        K, d, k = self.num_shards, self.dim, self.cfg.attention_dim
        want = {
            "W": (K, d, d), "b": (K, d), "W1": (k, d), "b1": (k,), "h1": (k,),
            "W2": (k, d), "b2": (k,), "h2": (k,), "static_logits": (K,),
        }
        for name, shape in want.items():
            if name not in self.params or self.params[name].shape != shape:
                got = None if name not in self.params else self.params[name].shape
                raise ShapeError(f"parameter {name}: expected shape {shape}, got {got}")

    def trainable(self) -> tuple[str, ...]:
        if self.mode == "static":
            return ("static_logits",)
        if self.mode == "mean":
            return ()
        return ATTENTION if self.cfg.freeze_transfer else TRANSFER + ATTENTION

    # forward -----------------------------------------------------------------
    def transfer(self, shard: int, table: EmbeddingTable) -> EmbeddingTable:
        W, b = self.params["W"][shard], self.params["b"][shard]
        if table.dim != W.shape[1]:
            raise ShapeError(f"table dim {table.dim} does not match transfer dim {W.shape[1]}")
        return EmbeddingTable(table.user_vecs @ W.T + b, table.item_vecs @ W.T + b)

    def _weights(self, T, side):
        """Weights (K, N) for transferred rows ``T``; ``side`` picks the network."""
        K, N = T.shape[0], T.shape[1]
        if self.mode == "mean":
            return np.full((K, N), 1.0 / K, dtype=T.dtype), None
        if self.mode == "static":
            return np.repeat(self.static_weights[:, None], N, axis=1).astype(T.dtype, copy=False), None
        A, c, h = (self.params[n] for n in (("W1", "b1", "h1") if side == "user" else ("W2", "b2", "h2")))
        return _attention_forward(T, A, c, h)

    def attention_weights(self, user_rows, item_rows):
        """Weights for one user and one item given their K transferred rows."""
        user_rows = np.asarray(user_rows, dtype=self.dtype)
        item_rows = np.asarray(item_rows, dtype=self.dtype)
        if not (np.isfinite(user_rows).all() and np.isfinite(item_rows).all()):
            raise ValueError("transferred rows must be finite")
        alpha, _ = self._weights(user_rows[:, None, :], "user")
        beta_operand = user_rows if self.cfg.strict_operand else item_rows
        beta, _ = self._weights(beta_operand[:, None, :], "item")
        return alpha[:, 0], beta[:, 0]

    def user_weights(self, users=None) -> np.ndarray:
        T = self._transfer_side(self.X_user, users)
        return self._weights(T, "user")[0]

    def item_weights(self, items=None) -> np.ndarray:
        T = self._transfer_side(self.X_item, items)
        return self._weights(T, "item")[0]

    def _transfer_side(self, X, rows=None):
        Xs = X if rows is None else X[:, rows]
        return transfer_rows(Xs, self.params["W"], self.params["b"])

    def aggregate_users(self, users=None) -> np.ndarray:
        T = self._transfer_side(self.X_user, users)
        a, _ = self._weights(T, "user")
        return _pool(a, T)

    def aggregate_items(self, items=None) -> np.ndarray:
        if self.cfg.strict_operand:
            raise ConfigError("item rows depend on the user under strict_operand; use score_users")
        T = self._transfer_side(self.X_item, items)
        a, _ = self._weights(T, "item")
        return _pool(a, T)

    def aggregate(self) -> EmbeddingTable:
        return EmbeddingTable(self.aggregate_users(), self.aggregate_items())

    def score_users(self, users) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        if not self.cfg.strict_operand:
            return self.aggregate_users(users) @ self.aggregate_items().T
        Tu = self._transfer_side(self.X_user, users)
        alpha, _ = self._weights(Tu, "user")
        beta, _ = self._weights(Tu, "item")
        P = _pool(alpha, Tu)
        Tq = self._transfer_side(self.X_item)
        out = np.zeros((users.size, Tq.shape[1]), dtype=P.dtype)
        for i in range(self.num_shards):
            out += beta[i][:, None] * (P @ Tq[i].T)
        return out

    def model(self):
        """Scoring object for :func:`evaluate`: a plain table when possible."""
        return self if self.cfg.strict_operand else self.aggregate()

    def copy(self) -> "Aggregator":
        return Aggregator(self.tables, self.cfg, {k: v.copy() for k, v in self.params.items()})

    def equals(self, other: "Aggregator") -> bool:
        return self.mode == other.mode and all(
            np.array_equal(self.params[n], other.params[n]) for n in PARAM_NAMES
        )

    # loss and gradients ------------------------------------------------------
    def _side_forward(self, X, rows, side):
        Xs = np.take(X, rows, axis=1)
        T = transfer_rows(Xs, self.params["W"], self.params["b"])
        a, cache = self._weights(T, side)
        return T, a, (Xs, cache)

    def _side_backward(self, T, a, cache, dT, d_weights, side, grads):
        """Accumulate parameter gradients given d/dT (direct) and d/d(weights).

        ``dT`` is consumed in place.
        """
        Xs, cache = cache
        if self.mode == "attention":
            names = ("W1", "b1", "h1") if side == "user" else ("W2", "b2", "h2")
            A, h = self.params[names[0]], self.params[names[2]]
            dT_att, dA, dc, dh = _attention_backward(T, A, h, a, cache, d_weights)
            dT += dT_att
            grads[names[0]] += dA
            grads[names[1]] += dc
            grads[names[2]] += dh
        elif self.mode == "static":
            w = self.static_weights
            dw = d_weights.sum(axis=1)
            grads["static_logits"] += w * (dw - np.dot(w, dw))
        grads["W"] += np.matmul(np.swapaxes(dT, 1, 2), Xs)
        grads["b"] += dT.sum(axis=1)

    def _pool_backward(self, T, a, G):
        """d/dT and d/d(weights) of ``sum_i a_i T_i`` given output gradient ``G``."""
        return a[:, :, None] * G, np.einsum("knd,nd->kn", T, G)

    def _regularize(self, grads):
        lam = self.cfg.l2_reg
        reg = 0.0
        for name in self.trainable():
            p = self.params[name]
            reg += float(np.sum(p * p))
            grads[name] += (2 * lam) * p
        return lam * reg

    def bpr_objective(self, users, pos, neg, with_grad=True):
        """Summed BPR loss over the triples plus ``l2 * |theta|^2`` and gradients."""
        grads = {n: np.zeros_like(p) for n, p in self.params.items()}
        uu, u_inv = np.unique(users, return_inverse=True)
        if self.cfg.strict_operand:
            return self._strict_bpr(users, pos, neg, uu, u_inv, grads, with_grad)
        ii, i_inv = np.unique(np.concatenate([pos, neg]), return_inverse=True)
        Tu, au, cu = self._side_forward(self.X_user, uu, "user")
        Ti, ai, ci = self._side_forward(self.X_item, ii, "item")
        P = _pool(au, Tu)
        Q = _pool(ai, Ti)
        b = users.size
        gu, gi, gj, loss = bpr_row_grads(P[u_inv], Q[i_inv[:b]], Q[i_inv[b:]], 0.0)
        loss += self._regularize(grads)
        if not with_grad:
            return loss, None
        GP = scatter_rows(u_inv, gu, P.shape[0])
        GQ = scatter_rows(i_inv, np.concatenate([gi, gj]), Q.shape[0])
        dT, dw = self._pool_backward(Tu, au, GP)
        self._side_backward(Tu, au, cu, dT, dw, "user", grads)
        dT, dw = self._pool_backward(Ti, ai, GQ)
        self._side_backward(Ti, ai, ci, dT, dw, "item", grads)
        return loss, {n: grads[n] for n in self.trainable()}

    def _strict_bpr(self, users, pos, neg, uu, u_inv, grads, with_grad):
        ii, i_inv = np.unique(np.concatenate([pos, neg]), return_inverse=True)
        Tu, au, cu = self._side_forward(self.X_user, uu, "user")
        bu, cb = self._weights(Tu, "item")
        Ti = transfer_rows(self.X_item[:, ii], self.params["W"], self.params["b"])
        P = _pool(au, Tu)
        b = users.size
        beta = bu[:, u_inv]  # (K, B)
        Qi = np.einsum("kb,kbd->bd", beta, Ti[:, i_inv[:b]])
        Qj = np.einsum("kb,kbd->bd", beta, Ti[:, i_inv[b:]])
        gu, gi, gj, loss = bpr_row_grads(P[u_inv], Qi, Qj, 0.0)
        loss += self._regularize(grads)
        if not with_grad:
            return loss, None
        GP = scatter_rows(u_inv, gu, P.shape[0])
        dTu, dwu = self._pool_backward(Tu, au, GP)
        # item side: value rows are the items, weights come from the user
        d_beta = np.einsum("kbd,bd->kb", Ti[:, i_inv[:b]], gi) + np.einsum("kbd,bd->kb", Ti[:, i_inv[b:]], gj)
        dTi = np.zeros_like(Ti)
        g_both = np.concatenate([gi, gj])
        for i in range(self.num_shards):
            dTi[i] = scatter_rows(i_inv, np.tile(beta[i], 2)[:, None] * g_both, Ti.shape[1])
        d_bu = np.zeros_like(bu)
        for i in range(self.num_shards):
            d_bu[i] = np.bincount(u_inv, weights=d_beta[i], minlength=uu.size)
        if self.mode == "attention":
            dT_att, dA, dc, dh = _attention_backward(Tu, self.params["W2"], self.params["h2"], bu, cb, d_bu)
            dTu += dT_att
            grads["W2"] += dA
            grads["b2"] += dc
            grads["h2"] += dh
        elif self.mode == "static":
            d_bu_item = d_bu
            w = self.static_weights
            dw = d_bu_item.sum(axis=1)
            grads["static_logits"] += w * (dw - np.dot(w, dw))
        self._side_backward(Tu, au, cu, dTu, dwu, "user", grads)
        grads["W"] += np.matmul(np.swapaxes(dTi, 1, 2), self.X_item[:, ii])
        grads["b"] += dTi.sum(axis=1)
        return loss, {n: grads[n] for n in self.trainable()}

    def wmf_objective(self, data: Dataset, with_grad=True):
        """Whole-data weighted squared loss of the aggregated table plus L2."""
        grads = {n: np.zeros_like(p) for n, p in self.params.items()}
        users, items = data.active_users(), data.active_items()
        Tu, au, cu = self._side_forward(self.X_user, users, "user")
        Ti, ai, ci = self._side_forward(self.X_item, items, "item")
        P = np.zeros((data.num_users, self.dim), dtype=Tu.dtype)
        Q = np.zeros((data.num_items, self.dim), dtype=Ti.dtype)
        P[users] = _pool(au, Tu)
        Q[items] = _pool(ai, Ti)
        c0 = self.cfg.negative_weight
        loss = wmf_loss(P, Q, data, c0) + self._regularize(grads)
        if not with_grad:
            return loss, None
        GP, GQ = wmf_gradients(P, Q, data, c0)
        dT, dw = self._pool_backward(Tu, au, GP[users])
        self._side_backward(Tu, au, cu, dT, dw, "user", grads)
        dT, dw = self._pool_backward(Ti, ai, GQ[items])
        self._side_backward(Ti, ai, ci, dT, dw, "item", grads)
        return loss, {n: grads[n] for n in self.trainable()}


def init_params(K, d, k, std, seed, dtype=np.float64) -> dict:
    """Identity transfers, zero biases, small Gaussian attention weights."""
    rng = np.random.default_rng(seed)
    p = {
        "W": np.repeat(np.eye(d)[None], K, axis=0),
        "b": np.zeros((K, d)),
        "W1": rng.standard_normal((k, d)) * std,
        "b1": rng.standard_normal(k) * std,
        "h1": rng.standard_normal(k) * std,
        "W2": rng.standard_normal((k, d)) * std,
        "b2": rng.standard_normal(k) * std,
        "h2": rng.standard_normal(k) * std,
        "static_logits": np.zeros(K),
    }
    return {n: v.astype(dtype) for n, v in p.items()}


def build_aggregator(tables, cfg: AggregatorConfig | None = None) -> Aggregator:
    return Aggregator(tables, cfg)


def transfer(agg: Aggregator, shard: int, table: EmbeddingTable) -> EmbeddingTable:
    return agg.transfer(shard, table)


def attention_weights(agg: Aggregator, user_rows, item_rows):
    return agg.attention_weights(user_rows, item_rows)


def aggregate(agg: Aggregator) -> EmbeddingTable:
    return agg.aggregate()


# -- training -----------------------------------------------------------------


def train_aggregator(agg: Aggregator, train: Dataset, val: Dataset | None = None, history=None) -> Aggregator:
    """Fit the aggregator parameters with Adagrad; submodel tables stay frozen.

    Early stopping watches validation Recall@10 and the best epoch's
    parameters are kept. Returns ``agg`` (updated in place).
    """
    cfg = agg.cfg
    if agg.mode == "mean":
        raise ConfigError("mean aggregation has no parameters to train")
    if len(train) == 0:
        raise TrainingError("training data has no interactions")
    history = history if history is not None else TrainHistory()
    rng = np.random.default_rng(cfg.seed)
    names = agg.trainable()
    accum = {n: np.zeros_like(agg.params[n]) for n in names}
    lr = cfg.learning_rate
    best, best_recall, stale = None, -np.inf, 0
    val_users = None
    if val is not None and len(val):
        val_users = np.intersect1d(train.active_users(), val.active_users())

    def step(grads):
        for n in names:
            g = grads[n]
            accum[n] += g * g
            agg.params[n] -= lr * g / (np.sqrt(accum[n]) + ADAGRAD_EPS)

    for epoch in range(cfg.max_epochs):
        total = 0.0
        if cfg.loss == "bpr":
            users, pos, neg = bpr_triples(train, rng)
            for start in range(0, users.size, cfg.batch_size):
                sl = slice(start, start + cfg.batch_size)
                loss, grads = agg.bpr_objective(users[sl], pos[sl], neg[sl])
                total += loss
                step(grads)
        else:
            loss, grads = agg.wmf_objective(train)
            total += loss
            step(grads)
        if not all(np.isfinite(agg.params[n]).all() for n in names):
            raise TrainingError(f"non-finite aggregator parameters after epoch {epoch}")
        history.losses.append(total)
        history.epochs_run = epoch + 1
        if val_users is None or val_users.size == 0:
            continue
        recall = evaluate(agg.model(), train, val, cutoffs=(10,), users=val_users).recall[10]
        history.val_recall.append(recall)
        _logger.debug("aggregator epoch %d loss %.4f val recall@10 %.4f", epoch, total, recall)
        if recall > best_recall:
            best_recall, stale = recall, 0
            best = {n: agg.params[n].copy() for n in names}
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    if best is not None:
        agg.params.update(best)
    else:
        history.best_epoch = history.epochs_run - 1
    return agg


# -- checkpoints --------------------------------------------------------------


def save_aggregator(agg: Aggregator, path):
    """Header line ``mode K d k`` then little-endian float32 parameter arrays."""
    with open(path, "wb") as fh:
        fh.write(f"{agg.mode} {agg.num_shards} {agg.dim} {agg.cfg.attention_dim}\n".encode("ascii"))
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(agg.params[name], dtype="<f4").tobytes())


def read_aggregator_header(path):
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii", errors="replace").split()
    if len(line) != 4 or line[0] not in MODES:
        raise CheckpointError(f"{path}: not an aggregator checkpoint")
    return line[0], int(line[1]), int(line[2]), int(line[3])


def load_aggregator(path, tables, cfg: AggregatorConfig | None = None) -> Aggregator:
    mode, K, d, k = read_aggregator_header(path)
    cfg = replace(cfg or AggregatorConfig(), mode=mode, attention_dim=k)
    shapes = {
        "W": (K, d, d), "b": (K, d), "W1": (k, d), "b1": (k,), "h1": (k,),
        "W2": (k, d), "b2": (k,), "h2": (k,), "static_logits": (K,),
    }
    with open(path, "rb") as fh:
        fh.readline()
        raw = np.frombuffer(fh.read(), dtype="<f4")
    need = sum(int(np.prod(s)) for s in shapes.values())
    if raw.size != need:
        raise CheckpointError(f"{path}: expected {need} floats, found {raw.size}")
    dtype = np.result_type(*[t.user_vecs.dtype for t in tables])
    params, off = {}, 0
    for name in PARAM_NAMES:
        size = int(np.prod(shapes[name]))
        params[name] = raw[off : off + size].reshape(shapes[name]).astype(dtype)
        off += size
    if len(tables) != K:
        raise CheckpointError(f"{path}: checkpoint has K={K} but {len(tables)} tables were given")
    return Aggregator(tables, cfg, params)
