import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardrec.dataset import Dataset, SplitSpec, load_dump, load_interactions, remove_interaction, split
from shardrec.errors import EmptyDatasetError, NotFoundError, ParseError, SplitError


def write(tmp_path, text, name="d.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoad:
    def test_three_lines(self, tmp_path):
        ds = load_interactions(write(tmp_path, "a\tx\na\ty\nb\tx\n"))
        assert (ds.num_users, ds.num_items, len(ds)) == (2, 2, 3)

    def test_duplicate_line_is_deduplicated(self, tmp_path):
        ds = load_interactions(write(tmp_path, "a\tx\na\ty\nb\tx\na\tx\n"))
        assert len(ds) == 3

    def test_first_appearance_indices(self, tmp_path):
        ds = load_interactions(write(tmp_path, "z,q,1\ny,q,1\nz,r,1\n"), format="csv")
        assert ds.user_ids == ["z", "y"]
        assert ds.item_ids == ["q", "r"]
        assert (0, 1) in ds and (1, 0) in ds

    def test_separator_detection(self, tmp_path):
        ds = load_interactions(write(tmp_path, "1::10::5::978300760\n2::10::3::978300761\n"))
        assert len(ds) == 2 and ds.num_items == 1

    def test_rating_threshold(self, tmp_path):
        ds = load_interactions(write(tmp_path, "a\tx\t5\na\ty\t1\nb\tx\t4\n"), rating_threshold=4)
        assert len(ds) == 2
        assert ds.item_ids == ["x"]

    def test_malformed_row_names_line(self, tmp_path):
        with pytest.raises(ParseError, match=":2:"):
            load_interactions(write(tmp_path, "a\tx\nbroken\n"), format="tsv")

    def test_bad_rating_names_line(self, tmp_path):
        with pytest.raises(ParseError, match=":3:"):
            load_interactions(write(tmp_path, "a\tx\t1\na\ty\t2\nb\tx\tfive\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            load_interactions(write(tmp_path, "\n\n"))

    def test_ml1m_counts(self, ml1m):
        # The published table lists 6,940 users; the file itself has 6,040.
        assert (ml1m.num_users, ml1m.num_items, len(ml1m)) == (6040, 3706, 1_000_209)


class TestAdjacency:
    def test_transpose_consistency(self, small_data):
        ua, ia = small_data.user_adjacency, small_data.item_adjacency
        pairs_u = {(u, int(v)) for u, vs in enumerate(ua) for v in vs}
        pairs_i = {(int(u), v) for v, us in enumerate(ia) for u in us}
        assert pairs_u == pairs_i == {tuple(y) for y in small_data}
        assert all(np.all(np.diff(vs) > 0) for vs in ua)

    def test_arrays_are_read_only(self, small_data):
        with pytest.raises(ValueError):
            small_data.users[0] = 5


class TestRemove:
    def test_remove(self):
        ds = Dataset([0, 1], [0, 0], 2, 1)
        assert list(remove_interaction(ds, (0, 0))) == [(1, 0)]

    def test_last_interaction_keeps_index(self):
        ds = Dataset([0, 1], [0, 0], 2, 1)
        out = ds.remove((0, 0))
        assert out.num_users == 2
        assert out.user_items(0).size == 0

    def test_round_trip(self, small_data):
        y = tuple(next(iter(small_data)))
        assert small_data.remove(y).add(y) == small_data

    def test_absent_is_an_error(self, small_data):
        with pytest.raises(NotFoundError):
            small_data.remove((0, small_data.num_items + 3))
        missing = next((0, v) for v in range(small_data.num_items) if (0, v) not in small_data)
        with pytest.raises(NotFoundError):
            small_data.remove(missing)


class TestSplit:
    def test_ten_interactions(self):
        ds = Dataset(np.arange(10), np.zeros(10, dtype=int), 10, 1)
        tr, va, te = split(ds, SplitSpec(0.8, 0.1, seed=3))
        assert (len(tr), len(va), len(te)) == (7, 1, 2)

    @pytest.mark.parametrize("frac", [1.0, 0.0, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(SplitError):
            SplitSpec(train_fraction=frac)

    def test_too_small_for_train(self):
        ds = Dataset([0, 1], [0, 0], 2, 1)
        with pytest.raises(SplitError):
            split(ds, SplitSpec(0.5, 0.5))

    def test_deterministic(self, small_data):
        a = split(small_data, SplitSpec(seed=7))
        b = split(small_data, SplitSpec(seed=7))
        assert all(x == y for x, y in zip(a, b))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 200), st.floats(0.05, 0.95), st.floats(0.05, 0.5), st.integers(0, 2**16))
    def test_partition_property(self, n, tf, vf, seed):
        ds = Dataset(np.arange(n) % 17, np.arange(n) // 17, 17, n // 17 + 1)
        try:
            tr, va, te = split(ds, SplitSpec(tf, vf, seed))
        except SplitError:
            return
        keys = np.concatenate([tr.keys, va.keys, te.keys])
        assert np.array_equal(np.sort(keys), ds.keys)
        assert len(tr) > 0 and len(va) >= 1 and len(te) >= 1


def test_dump_round_trip(tmp_path, tmp_path_factory):
    src = write(tmp_path, "u9\tb\nu3\ta\nu9\ta\n")
    ds = load_interactions(src)
    out = tmp_path / "dump.tsv"
    ds.dump(out)
    again = load_dump(out)
    assert again == ds
    assert again.user_ids == ds.user_ids and again.item_ids == ds.item_ids
    lines = out.read_text().splitlines()
    assert lines == sorted(lines)
    assert (tmp_path / "dump.tsv.users").read_text().splitlines()[0] == "u9\t0"
