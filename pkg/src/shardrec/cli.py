"""``shardrec`` command line: pretrain, partition, train, evaluate, unlearn, bench.

All commands share one output directory::

    config.txt          effective configuration
    pretrain.emb        partition embeddings (model checkpoint format)
    partition.txt       shard assignment
    shard_<i>.emb       submodel checkpoints
    aggregator.agg      aggregator checkpoint
    deleted.tsv         interactions removed by ``unlearn`` (index pairs)
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from .aggregation import load_aggregator, save_aggregator
from .bench import format_rows, run_bench
from .config import FIELD_TYPES, PipelineConfig, _convert, dump_config, load_config
from .dataset import Dataset, SplitSpec, load_interactions, split
from .errors import (
    BatchAbortedError,
    CheckpointError,
    ConfigError,
    ParseError,
    ShapeError,
    ShardrecError,
)
from .models import EmbeddingTable, load_table, pretrain_for_partition, read_table_header, save_table
from .partition import PretrainedEmbeddings, ShardAssignment, partition
from .unlearn import (
    PipelineState,
    UnlearnRequest,
    batch_unlearn,
    full_retrain_baseline,
    summarize,
    summary_table,
    unlearn,
)

_logger = logging.getLogger("shardrec")

EXIT_CODES = {
    "error": 1, "config": 3, "parse": 4, "data": 5, "not-found": 6,
    "capacity": 7, "shape": 8, "training": 9, "io": 10,
}


# -- data plumbing ------------------------------------------------------------


class Workspace:
    """Paths inside the output directory plus the deterministic data split."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.out
        self._data = None

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def shard_path(self, i: int) -> str:
        return self.path(f"shard_{i}.emb")

    def ensure_out(self):
        os.makedirs(self.out, exist_ok=True)
        with open(self.path("config.txt"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(self.cfg))

    def data(self):
        """``(full, train, val, test)`` with recorded deletions applied to train."""
        if self._data is None:
            if not self.cfg.data:
                raise ConfigError("no dataset given (use --data or 'data = ...' in the config)")
            try:
                full = load_interactions(self.cfg.data, self.cfg.format or None, self.cfg.rating_threshold)
            except FileNotFoundError as exc:
                raise CheckpointError(f"cannot read dataset {self.cfg.data}: {exc.strerror}") from exc
            spec = SplitSpec(self.cfg.train_fraction, self.cfg.val_fraction, self.cfg.seed)
            train, val, test = split(full, spec)
            for y in self.deleted():
                if y in train:
                    train = train.remove(y)
            self._data = (full, train, val, test)
        return self._data

    def deleted(self) -> list:
        path = self.path("deleted.tsv")
        if not os.path.exists(path):
            return []
        with open(path, encoding="utf-8") as fh:
            return [tuple(int(x) for x in line.split()) for line in fh if line.strip()]

    def record_deleted(self, targets):
        with open(self.path("deleted.tsv"), "a", encoding="utf-8") as fh:
            for u, v in targets:
                fh.write(f"{u}\t{v}\n")

    def embeddings(self, train: Dataset) -> PretrainedEmbeddings:
        path = self.path("pretrain.emb")
        if not os.path.exists(path):
            raise CheckpointError(f"{path} not found; run 'shardrec pretrain' first")
        table = load_table(path)
        emb = PretrainedEmbeddings(table.user_vecs, table.item_vecs)
        emb.check(train)
        return emb

    def assignment(self, train: Dataset) -> ShardAssignment:
        path = self.path("partition.txt")
        if not os.path.exists(path):
            raise CheckpointError(f"{path} not found; run 'shardrec partition' first")
        return ShardAssignment.load(path, train.num_items)

    def tables(self, K: int, train: Dataset) -> list:
        out = []
        for i in range(K):
            path = self.shard_path(i)
            if not os.path.exists(path):
                raise CheckpointError(f"{path} not found; run 'shardrec train' first")
            _, d, m, n, _ = read_table_header(path)
            if (m, n) != (train.num_users, train.num_items):
                raise ShapeError(
                    f"{path}: checkpoint covers {m} users / {n} items, dataset has "
                    f"{train.num_users} / {train.num_items}"
                )
            out.append(load_table(path))
        return out

    def state(self) -> PipelineState:
        cfg = self.cfg
        _, train, val, test = self.data()
        assignment = self.assignment(train)
        state = PipelineState(
            train, assignment, cfg.train_config(), cfg.aggregator_config(), val, test,
            validate_shards=cfg.validate_shards, strategy=cfg.strategy,
            partition_cfg=cfg.partition_config(assignment.num_shards),
        )
        state.tables = self.tables(assignment.num_shards, train)
        state.shard_seeds = [state.original_seed(i) for i in range(assignment.num_shards)]
        agg_path = self.path("aggregator.agg")
        if not os.path.exists(agg_path):
            raise CheckpointError(f"{agg_path} not found; run 'shardrec train' first")
        state.aggregator = load_aggregator(agg_path, state.tables, cfg.aggregator_config())
        state.agg_cfg = state.aggregator.cfg
        return state

    def save_state(self, state: PipelineState, shards=None):
        shards = range(state.num_shards) if shards is None else shards
        for i in shards:
            save_table(state.tables[i], self.shard_path(i), self.cfg.model, state.shard_seeds[i],
                       {"shard": i, "interactions": len(state.shard_data(i))})
        save_aggregator(state.aggregator, self.path("aggregator.agg"))


def read_targets(path, dataset: Dataset) -> list:
    """``user item`` lines in original ids; ``#`` starts a comment."""
    users = {tok: i for i, tok in enumerate(dataset.user_ids or [])}
    items = {tok: i for i, tok in enumerate(dataset.item_ids or [])}
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(f"cannot read targets {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ParseError("expected 'user item'", path, lineno)
            if parts[0] not in users or parts[1] not in items:
                raise ParseError(f"unknown user or item id in {line!r}", path, lineno)
            out.append((users[parts[0]], items[parts[1]]))
    return out


# -- commands -----------------------------------------------------------------


def cmd_pretrain(ws: Workspace, args) -> int:
    ws.ensure_out()
    _, train, val, _ = ws.data()
    t = time.perf_counter()
    emb = pretrain_for_partition(train, ws.cfg.pretrain_config(), val)
    save_table(EmbeddingTable(emb.user_vecs, emb.item_vecs), ws.path("pretrain.emb"), "wmf", ws.cfg.seed,
               {"purpose": "partition"})
    print(f"pretrained {emb.user_vecs.shape[0]} users x {emb.item_vecs.shape[0]} items, d={emb.dim} "
          f"in {time.perf_counter() - t:.1f}s -> {ws.path('pretrain.emb')}")
    return 0


def cmd_partition(ws: Workspace, args) -> int:
    ws.ensure_out()
    _, train, _, _ = ws.data()
    emb = None if ws.cfg.strategy == "random" else ws.embeddings(train)
    assignment = partition(ws.cfg.strategy, train, emb, ws.cfg.partition_config())
    assignment.save(ws.path("partition.txt"))
    counts = assignment.unit_counts()
    sizes = assignment.shard_sizes()
    unit = {"user": "users", "item": "items"}.get(assignment.kind, "interactions")
    print(f"{assignment.kind} partition, K={assignment.num_shards}, t={assignment.capacity} {unit}")
    width = max(int(sizes.max()), 1)
    for i, (c, s) in enumerate(zip(counts, sizes)):
        members = f"{unit}={c:>8}  " if unit != "interactions" else ""
        print(f"shard {i:>3}  {members}interactions={s:>8}  {'#' * int(round(40 * s / width))}")
    return 0


def cmd_train(ws: Workspace, args) -> int:
    ws.ensure_out()
    cfg = ws.cfg
    _, train, val, test = ws.data()
    assignment = ws.assignment(train)
    state = PipelineState(
        train, assignment, cfg.train_config(), cfg.aggregator_config(), val, test,
        validate_shards=cfg.validate_shards,
    )
    t = time.perf_counter()
    state.fit(jobs=cfg.jobs)
    before = [tbl.copy() for tbl in state.tables]
    ws.save_state(state)
    assert all(a.equals(b) for a, b in zip(before, state.tables))
    print(f"trained {state.num_shards} submodels + aggregator ({cfg.agg}) in {time.perf_counter() - t:.1f}s")
    return 0


def cmd_evaluate(ws: Workspace, args) -> int:
    state = ws.state()
    metrics = state.evaluate(ws.cfg.cutoffs)
    sys.stdout.write(metrics.lines())
    with open(ws.path("metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(metrics.lines())
    with open(ws.path("metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(metrics.to_json() + "\n")
    return 0


def cmd_unlearn(ws: Workspace, args) -> int:
    full, _, _, _ = ws.data()
    state = ws.state()
    targets = read_targets(args.targets, full)
    size_before = len(state.train)
    requests = [UnlearnRequest(t, args.seed_policy) for t in targets]
    if args.repartition:
        state.embeddings = None if ws.cfg.strategy == "random" else ws.embeddings(state.train)
        reports = [unlearn(state, r, repartition=True) for r in requests]
        state.assignment.save(ws.path("partition.txt"))
    else:
        try:
            reports = batch_unlearn(state, requests, coalesce_same_shard=args.coalesce_same_shard)
        except BatchAbortedError as exc:
            done = [tuple(r.target) for r in exc.reports]
            ws.record_deleted(done)
            ws.save_state(state)
            _write_reports(ws, exc.reports, None)
            raise
    ws.record_deleted([r.target for r in reports])
    ws.save_state(state)
    full_seconds = None
    if args.baseline and requests:
        full_seconds = full_retrain_baseline(state, requests[-1]).full_retrain_seconds
    for r in reports:
        _logger.info("request %s -> shard %d", r.target, r.shard)
    _write_reports(ws, reports, full_seconds)
    print(f"removed {size_before - len(state.train)} interactions; |Y| {size_before} -> {len(state.train)}")
    sys.stdout.write(summary_table(reports, full_seconds))
    return 0


def _write_reports(ws, reports, full_seconds):
    with open(ws.path("unlearn_reports.jsonl"), "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    with open(ws.path("unlearn_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary_table(reports, full_seconds))
        fh.write(json.dumps(summarize(reports, full_seconds), sort_keys=True) + "\n")


def _int_list(text: str) -> list:
    try:
        values = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"expected positive integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigError(f"sweep values must be positive integers, got {text!r}")
    return values


def cmd_bench(ws: Workspace, args) -> int:
    ws.ensure_out()
    cfg = ws.cfg
    _, train, val, test = ws.data()
    strategies = [s for s in args.strategies.replace(",", " ").split()]
    aggs = [a for a in args.aggs.replace(",", " ").split()]
    grid = _int_list(args.shard_grid)
    emb = None
    if any(s != "random" for s in strategies):
        path = ws.path("pretrain.emb")
        if os.path.exists(path):
            emb = ws.embeddings(train)
        else:
            emb = pretrain_for_partition(train, cfg.pretrain_config(), val)
    rows = run_bench(
        train, val, test, emb, strategies, aggs, grid, cfg.train_config(), cfg.aggregator_config(),
        cfg.partition_config(), args.requests, cfg.cutoffs, cfg.seed,
    )
    table = format_rows(rows)
    sys.stdout.write(table)
    with open(ws.path("bench.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(ws.path("bench.jsonl"), "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r.as_dict(), sort_keys=True) + "\n")
    return 0


# -- argument parsing ---------------------------------------------------------

# short flags named in the interface, mapped to config keys
ALIASES = {"shards": ["--shards", "-K"], "strategy": ["--strategy"], "agg": ["--agg"], "out": ["--out"],
           "seed": ["--seed"], "data": ["--data"]}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value configuration file")
    group = p.add_argument_group("configuration overrides")
    for name in FIELD_TYPES:
        flags = ALIASES.get(name, [f"--{name.replace('_', '-')}"])
        group.add_argument(*flags, dest=f"cfg_{name}", metavar=name.upper(), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shardrec", description="Sharded recommendation training with exact unlearning.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "pretrain": (cmd_pretrain, "train partition embeddings"),
        "partition": (cmd_partition, "split training data into shards"),
        "train": (cmd_train, "train submodels and the aggregator"),
        "evaluate": (cmd_evaluate, "Recall/NDCG of the aggregated model"),
        "unlearn": (cmd_unlearn, "delete interactions and retrain"),
        "bench": (cmd_bench, "sweep strategies, aggregators and shard counts"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.set_defaults(func=fn)
        if name == "unlearn":
            p.add_argument("--targets", required=True, help="file of 'user item' lines (original ids)")
            p.add_argument("--coalesce-same-shard", action="store_true")
            p.add_argument("--seed-policy", choices=("reuse_original", "fresh"), default="reuse_original")
            p.add_argument("--repartition", action="store_true",
                           help="rebuild embeddings, partition and all submodels after each deletion")
            p.add_argument("--baseline", action="store_true", help="also time a full retrain")
        if name == "bench":
            p.add_argument("--strategies", default="inbp,random")
            p.add_argument("--aggs", default="attention,mean")
            p.add_argument("--shard-grid", default="5,10,20")
            p.add_argument("--requests", type=int, default=3)
    return parser


def config_from_args(args) -> PipelineConfig:
    overrides = {}
    for name in FIELD_TYPES:
        raw = getattr(args, f"cfg_{name}", None)
        if raw is not None:
            overrides[name] = _convert(name, raw)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        return args.func(Workspace(cfg), args)
    except ShardrecError as exc:
        print(f"shardrec: {exc.category} error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        where = f" ({exc.filename})" if exc.filename else ""
        print(f"shardrec: io error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
