import numpy as np
import pytest
from scipy.stats import ortho_group

from shardrec.dataset import Dataset, SplitSpec, split
from shardrec.errors import CheckpointError, ConfigError, ShapeError, TrainingError
from shardrec.models import (
    EmbeddingTable,
    TrainConfig,
    TrainHistory,
    bpr_epoch,
    bpr_gradients,
    bpr_loss,
    load_table,
    normalized_adjacency,
    pretrain_for_partition,
    propagate,
    read_table_header,
    save_table,
    score,
    train_bpr,
    train_lightgcn,
    train_model,
    train_wmf,
    wmf_gradients,
    wmf_gradients_naive,
    wmf_loss,
    wmf_loss_naive,
)

from conftest import low_rank_dataset


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def random_instance(m, n, density, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    mask[np.arange(m), rng.integers(0, n, m)] = True
    u, v = np.nonzero(mask)
    return Dataset(u, v, m, n), rng


class TestScore:
    def test_zero(self):
        t = EmbeddingTable(np.zeros((1, 3)), np.zeros((1, 3)))
        assert score(t, 0, 0) == 0.0

    def test_hand(self):
        t = EmbeddingTable([[1.0, 2.0]], [[3.0, -1.0]])
        assert score(t, 0, 0) == 1.0

    def test_rotation_invariance(self):
        rng = np.random.default_rng(0)
        P, Q = rng.normal(size=(5, 4)), rng.normal(size=(6, 4))
        R = ortho_group.rvs(4, random_state=1)
        a, b = EmbeddingTable(P, Q), EmbeddingTable(P @ R, Q @ R)
        np.testing.assert_allclose(a.score_users(np.arange(5)), b.score_users(np.arange(5)), atol=1e-12)

    def test_out_of_range(self):
        t = EmbeddingTable(np.zeros((2, 2)), np.zeros((3, 2)))
        with pytest.raises(IndexError):
            score(t, 2, 0)
        with pytest.raises(IndexError):
            score(t, 0, -1)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            EmbeddingTable(np.zeros((2, 2)), np.zeros((3, 3)))


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.dim, c.learning_rate, c.batch_size, c.max_epochs, c.early_stop_patience) == (64, 0.05, 512, 1000, 10)

    @pytest.mark.parametrize("kw", [{"model": "svd"}, {"dim": 0}, {"learning_rate": 0}, {"early_stop_patience": 0}, {"l2_reg": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestBPR:
    def test_gradients(self):
        rng = np.random.default_rng(3)
        P, Q = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        users, pos, neg = np.array([0, 1, 2, 3, 0]), np.array([1, 0, 3, 2, 2]), np.array([2, 3, 0, 1, 1])
        gP, gQ = bpr_gradients(P, Q, users, pos, neg, l2=0.1)
        assert rel_err(gP, central_diff(lambda: bpr_loss(P, Q, users, pos, neg, 0.1), P)) < 1e-4
        assert rel_err(gQ, central_diff(lambda: bpr_loss(P, Q, users, pos, neg, 0.1), Q)) < 1e-4

    def test_step_decreases_loss(self):
        rng = np.random.default_rng(5)
        P, Q = rng.normal(size=(6, 4)), rng.normal(size=(8, 4))
        users, pos, neg = rng.integers(0, 6, 20), rng.integers(0, 8, 20), rng.integers(0, 8, 20)
        before = bpr_loss(P, Q, users, pos, neg, 1e-3)
        gP, gQ = bpr_gradients(P, Q, users, pos, neg, 1e-3)
        after = bpr_loss(P - 1e-3 * gP, Q - 1e-3 * gQ, users, pos, neg, 1e-3)
        assert after < before

    def test_epoch_matches_numpy_reference(self):
        rng = np.random.default_rng(2)
        P, Q = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
        users, pos, neg = rng.integers(0, 7, 50), rng.integers(0, 9, 50), rng.integers(0, 9, 50)
        lr, l2, bs = 0.1, 0.01, 8
        P2, Q2, aP2, aQ2 = P.copy(), Q.copy(), np.zeros_like(P), np.zeros_like(Q)
        for s in range(0, 50, bs):
            sl = slice(s, s + bs)
            gP, gQ = bpr_gradients(P2, Q2, users[sl], pos[sl], neg[sl], l2)
            for X, A, G, rows in ((P2, aP2, gP, np.unique(users[sl])),
                                  (Q2, aQ2, gQ, np.unique(np.r_[pos[sl], neg[sl]]))):
                A[rows] += G[rows] ** 2
                X[rows] -= lr * G[rows] / (np.sqrt(A[rows]) + 1e-10)
        aP, aQ = np.zeros_like(P), np.zeros_like(Q)
        loss = bpr_epoch(P, Q, aP, aQ, users, pos, neg, bs, lr, l2)
        np.testing.assert_allclose(P, P2, atol=1e-10)
        np.testing.assert_allclose(Q, Q2, atol=1e-10)
        assert loss > 0

    def test_tiny_ordering(self):
        data = Dataset([0, 1], [0, 1], 2, 2)
        t = train_bpr(data, TrainConfig(dim=4, max_epochs=200, learning_rate=0.1, init_std=0.1))
        assert t.score(0, 0) > t.score(0, 1)
        assert t.score(1, 1) > t.score(1, 0)

    def test_deterministic(self, small_data):
        cfg = TrainConfig(dim=8, max_epochs=5, seed=4)
        assert train_bpr(small_data, cfg).equals(train_bpr(small_data, cfg))

    def test_user_with_full_row_is_skipped(self):
        data = Dataset([0, 0, 1], [0, 1, 0], 2, 2)
        t = train_bpr(data, TrainConfig(dim=2, max_epochs=3))
        assert t.is_finite()

    def test_empty(self):
        with pytest.raises(TrainingError):
            train_bpr(Dataset([], [], 2, 2), TrainConfig())

    def test_learns_structure(self, small_split):
        tr, va, te = small_split
        from shardrec.metrics import evaluate

        t = train_bpr(tr, TrainConfig(dim=8, max_epochs=60, batch_size=64))
        rng = np.random.default_rng(0)
        rand = EmbeddingTable(rng.normal(size=t.user_vecs.shape), rng.normal(size=t.item_vecs.shape))
        assert evaluate(t, tr, te).recall[10] > evaluate(rand, tr, te).recall[10] + 0.1


class TestWMF:
    @pytest.mark.parametrize("shape", [(5, 5), (10, 10)])
    def test_gram_equals_naive(self, shape):
        data, rng = random_instance(*shape, 0.3, seed=shape[0])
        P, Q = rng.normal(size=(shape[0], 3)), rng.normal(size=(shape[1], 3))
        assert abs(wmf_loss(P, Q, data, 0.2, 0.1) - wmf_loss_naive(P, Q, data, 0.2, 0.1)) <= 1e-8
        for a, b in zip(wmf_gradients(P, Q, data, 0.2, 0.1), wmf_gradients_naive(P, Q, data, 0.2, 0.1)):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-8)

    def test_user_batches_sum_to_whole(self):
        data, rng = random_instance(10, 10, 0.3, seed=1)
        P, Q = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        whole = wmf_loss(P, Q, data, 0.1, 0.05)
        parts = wmf_loss(P, Q, data, 0.1, 0.05, users=np.arange(4)) + wmf_loss(P, Q, data, 0.1, 0.05, users=np.arange(4, 10))
        assert abs(whole - parts) < 1e-9

    def test_gradients(self):
        data, rng = random_instance(4, 4, 0.4, seed=7)
        P, Q = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        gP, gQ = wmf_gradients(P, Q, data, 0.05, 0.01)
        assert rel_err(gP, central_diff(lambda: wmf_loss(P, Q, data, 0.05, 0.01), P)) < 1e-4
        assert rel_err(gQ, central_diff(lambda: wmf_loss(P, Q, data, 0.05, 0.01), Q)) < 1e-4

    def test_c0_zero_fits_observed(self):
        data = Dataset([0], [0], 1, 1)
        cfg = TrainConfig(model="wmf", dim=1, negative_weight=0.0, l2_reg=0.0, max_epochs=400, learning_rate=0.1, init_std=0.5)
        t = train_wmf(data, cfg)
        assert abs(t.score(0, 0) - 1.0) < 1e-3

    def test_deterministic(self, small_data):
        cfg = TrainConfig(model="wmf", dim=8, max_epochs=5, batch_size=16)
        assert train_wmf(small_data, cfg).equals(train_wmf(small_data, cfg))

    def test_pretrain(self, small_data):
        emb = pretrain_for_partition(small_data, TrainConfig(dim=6, max_epochs=3))
        assert emb.user_vecs.shape == (small_data.num_users, 6)
        assert emb.item_vecs.shape == (small_data.num_items, 6)
        again = pretrain_for_partition(small_data, TrainConfig(dim=6, max_epochs=3))
        assert np.array_equal(emb.user_vecs, again.user_vecs)


class TestLightGCN:
    def test_zero_layers_is_bpr(self, small_data):
        cfg = TrainConfig(model="lightgcn", dim=8, max_epochs=4, num_layers=0, seed=3)
        bpr = TrainConfig(model="bpr", dim=8, max_epochs=4, seed=3)
        assert train_lightgcn(small_data, cfg).equals(train_bpr(small_data, bpr))

    def test_two_node_hand_case(self):
        adj = normalized_adjacency(Dataset([0], [0], 1, 1))
        eu, ev = np.array([[2.0, 0.0]]), np.array([[0.0, 4.0]])
        fu, fv = propagate(adj, eu, ev, 1)
        np.testing.assert_allclose(fu, [[1.0, 2.0]])
        np.testing.assert_allclose(fv, [[1.0, 2.0]])

    def test_degree_normalization(self):
        # user 0 has two items, item 0 has two users
        adj = normalized_adjacency(Dataset([0, 0, 1], [0, 1, 0], 2, 2)).toarray()
        np.testing.assert_allclose(adj, [[1 / 2, 1 / np.sqrt(2)], [1 / np.sqrt(2), 0.0]])

    def test_linear(self, small_data):
        adj = normalized_adjacency(small_data)
        rng = np.random.default_rng(0)
        A = (rng.normal(size=(small_data.num_users, 4)), rng.normal(size=(small_data.num_items, 4)))
        B = (rng.normal(size=A[0].shape), rng.normal(size=A[1].shape))
        fa, fb = propagate(adj, *A, 2), propagate(adj, *B, 2)
        fab = propagate(adj, 2.5 * A[0] + B[0], 2.5 * A[1] + B[1], 2)
        for x, y, z in zip(fa, fb, fab):
            np.testing.assert_allclose(z, 2.5 * x + y, atol=1e-12)
            assert np.isfinite(z).all()

    def test_isolated_user_gets_no_messages(self):
        adj = normalized_adjacency(Dataset([0], [0], 2, 1))
        eu = np.array([[1.0], [3.0]])
        fu, _ = propagate(adj, eu, np.array([[1.0]]), 2)
        assert fu[1, 0] == pytest.approx(1.0)  # layer 0 only, averaged over three layers

    def test_trains(self, small_data):
        t = train_lightgcn(small_data, TrainConfig(model="lightgcn", dim=8, max_epochs=3, batch_size=64))
        assert t.is_finite()


class TestFitLoop:
    def test_early_stopping_returns_best(self):
        data = low_rank_dataset(80, 50, 10, seed=1)
        tr, va, _ = split(data, SplitSpec(seed=1))
        cfg = TrainConfig(dim=8, max_epochs=80, early_stop_patience=3, learning_rate=0.3, batch_size=32)
        h = TrainHistory()
        best = train_bpr(tr, cfg, va, h)
        assert h.epochs_run < cfg.max_epochs
        assert h.epochs_run - 1 - h.best_epoch == cfg.early_stop_patience
        assert h.val_recall[h.best_epoch] == max(h.val_recall)
        replay = train_bpr(tr, TrainConfig(**{**cfg.__dict__, "max_epochs": h.best_epoch + 1}))
        assert best.equals(replay)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_detected(self, small_data):
        with pytest.raises(TrainingError, match="non-finite"):
            train_model(small_data, TrainConfig(model="wmf", dim=4, learning_rate=1e200, max_epochs=3, dtype="float64", init_std=1e100))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        t = EmbeddingTable(rng.normal(size=(3, 4)).astype(np.float32), rng.normal(size=(5, 4)).astype(np.float32))
        save_table(t, tmp_path / "m.emb", model="bpr", seed=7, meta={"shard": 2})
        assert read_table_header(tmp_path / "m.emb") == ("bpr", 4, 3, 5, 7)
        assert load_table(tmp_path / "m.emb").equals(t)
        assert '"shard": 2' in (tmp_path / "m.emb.meta").read_text()

    def test_layout(self, tmp_path):
        t = EmbeddingTable(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
        save_table(t, tmp_path / "m.emb")
        raw = (tmp_path / "m.emb").read_bytes()
        assert raw.startswith(b"bpr 2 1 1 0\n")
        assert np.frombuffer(raw.split(b"\n", 1)[1], "<f4").tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_truncated(self, tmp_path):
        (tmp_path / "m.emb").write_bytes(b"bpr 2 1 1 0\n" + b"\0" * 8)
        with pytest.raises(CheckpointError):
            load_table(tmp_path / "m.emb")
        with pytest.raises(CheckpointError):
            load_table(tmp_path / "missing.emb")
