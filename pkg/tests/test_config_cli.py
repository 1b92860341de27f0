import json

import numpy as np
import pytest

from shardrec.cli import main, read_targets
from shardrec.config import PipelineConfig, dump_config, load_config, parse_config_text
from shardrec.dataset import SplitSpec, load_interactions, split
from shardrec.errors import ConfigError, ParseError
from shardrec.metrics import evaluate
from shardrec.models import load_table
from shardrec.partition import ShardAssignment

from conftest import low_rank_dataset

FAST = ["--dim", "4", "--max-epochs", "3", "--batch-size", "64", "--agg-epochs", "1",
        "--attention-dim", "2", "--jobs", "1"]


@pytest.fixture
def data_file(tmp_path):
    ds = low_rank_dataset(40, 30, 6, seed=5)
    path = tmp_path / "ratings.tsv"
    path.write_text("".join(f"u{u}\ti{v}\n" for u, v in ds))
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_precedence(self, tmp_path):
        (tmp_path / "c.txt").write_text("shards = 4\nseed = 3\n# comment\nagg = mean\n")
        cfg = load_config(tmp_path / "c.txt", {"shards": 7})
        assert (cfg.shards, cfg.seed, cfg.agg, cfg.strategy) == (7, 3, "mean", "inbp")

    def test_unknown_key(self):
        with pytest.raises(ParseError, match=":2:"):
            parse_config_text("shards = 2\nshard_count = 3\n", "c.txt")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config_text("shards = many\n")
        with pytest.raises(ConfigError):
            PipelineConfig(strategy="spectral")

    def test_dump_round_trip(self, tmp_path):
        cfg = PipelineConfig(shards=5, capacity=None, cutoffs=(5, 10), freeze_transfer=True, rating_threshold=3.5)
        (tmp_path / "c.txt").write_text(dump_config(cfg))
        assert load_config(tmp_path / "c.txt") == cfg

    def test_derived_configs(self):
        cfg = PipelineConfig(model="wmf", shards=4, agg_epochs=3)
        assert cfg.aggregator_config().loss == "wmf" and cfg.aggregator_config().max_epochs == 3
        assert cfg.partition_config().num_shards == 4
        assert cfg.pretrain_config().model == "wmf"


class TestTargets:
    def test_parse(self, data_file, tmp_path):
        ds = load_interactions(data_file)
        (tmp_path / "t.txt").write_text("# header\nu0 i3\n\nu1,i2\n")
        assert read_targets(tmp_path / "t.txt", ds) == [
            (ds.user_ids.index("u0"), ds.item_ids.index("i3")), (ds.user_ids.index("u1"), ds.item_ids.index("i2"))
        ]

    def test_bad_line_numbered(self, data_file, tmp_path):
        ds = load_interactions(data_file)
        (tmp_path / "t.txt").write_text("u0 i3\nu1\n")
        with pytest.raises(ParseError, match=":2:"):
            read_targets(tmp_path / "t.txt", ds)


class TestCommands:
    def test_pipeline(self, data_file, tmp_path, capsys):
        out = tmp_path / "run"
        common = ["--data", data_file, "--out", out, "-K", "3", *FAST]
        assert run("pretrain", *common) == 0
        assert run("partition", *common) == 0
        text = capsys.readouterr().out
        assert text.count("shard ") == 3

        ds = load_interactions(data_file)
        assignment = ShardAssignment.load(out / "partition.txt", ds.num_items)
        assert assignment.num_shards == 3 and assignment.unit_counts().max() <= assignment.capacity

        assert run("train", *common) == 0
        shards = sorted(p.name for p in out.glob("shard_*.emb"))
        assert len(shards) + len(list(out.glob("*.agg"))) == 4
        assert load_table(out / "shard_0.emb").num_users == ds.num_users

        capsys.readouterr()
        assert run("evaluate", *common, "--cutoffs", "5,10") == 0
        lines = capsys.readouterr().out.splitlines()
        assert [line.split("\t")[:2] for line in lines] == [["recall", "5"], ["recall", "10"], ["ndcg", "5"], ["ndcg", "10"]]
        first = json.loads((out / "metrics.json").read_text())
        assert run("evaluate", *common, "--cutoffs", "5,10") == 0
        assert json.loads((out / "metrics.json").read_text()) == first

        train = split(ds, SplitSpec(seed=0))[0]
        u, v = next(iter(train))
        targets = tmp_path / "targets.txt"
        targets.write_text(f"{ds.user_ids[u]} {ds.item_ids[v]}\n")
        assert run("unlearn", *common, "--targets", targets) == 0
        report = json.loads((out / "unlearn_reports.jsonl").read_text().splitlines()[0])
        assert report["target"] == [u, v] and 0 <= report["shard"] < 3
        assert "Shard Training" in (out / "unlearn_summary.txt").read_text()
        assert "removed 1 interactions" in capsys.readouterr().out
        assert run("unlearn", *common, "--targets", targets) == 6  # already gone

    def test_evaluate_matches_library(self, data_file, tmp_path):
        out = tmp_path / "run"
        common = ["--data", data_file, "--out", out, "-K", "2", "--strategy", "random", "--agg", "mean", *FAST]
        assert run("partition", *common) == 0
        assert run("train", *common) == 0
        assert run("evaluate", *common) == 0
        from shardrec.cli import Workspace

        ws = Workspace(load_config(None, {"data": str(data_file), "out": str(out), "shards": 2,
                                          "strategy": "random", "agg": "mean"}))
        state = ws.state()
        _, train, val, test = ws.data()
        lib = evaluate(state.model(), train.union(val), test)
        assert json.loads((out / "metrics.json").read_text())["recall"]["20"] == lib.recall[20]

    def test_exit_codes(self, data_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert run("train", "--data", data_file, "--out", out, *FAST) == 10  # no partition file yet
        assert run("partition", "--data", data_file, "--out", out, "--strategy", "random", "--capacity", "2") == 7
        assert "need t >=" in capsys.readouterr().err
        assert run("partition", "--data", tmp_path / "missing.tsv", "--out", out) == 10
        (tmp_path / "bad.txt").write_text("shards = 2\nbogus = 1\n")
        assert run("partition", "--config", tmp_path / "bad.txt") == 4
        assert run("partition", "--data", data_file, "--strategy", "nope") == 3

    def test_single_shard_partition(self, data_file, tmp_path):
        out = tmp_path / "run"
        assert run("partition", "--data", data_file, "--out", out, "-K", "1", "--strategy", "random") == 0
        ds = load_interactions(data_file)
        a = ShardAssignment.load(out / "partition.txt", ds.num_items)
        assert set(np.unique(a.labels).tolist()) == {0}

    def test_bench_rows(self, data_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert run("bench", "--data", data_file, "--out", out, *FAST, "--strategies", "random",
                   "--aggs", "mean", "--shard-grid", "2,3,4", "--requests", "1") == 0
        rows = [json.loads(line) for line in (out / "bench.jsonl").read_text().splitlines()]
        assert [r["shards"] for r in rows] == [2, 3, 4]
        assert run("bench", "--data", data_file, "--out", out, "--shard-grid", "0,2") == 3
