"""Ablation sweeps: partition strategy x aggregation mode x shard count."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace

import numpy as np

from .aggregation import AggregatorConfig
from .dataset import Dataset
from .errors import ConfigError
from .models import TrainConfig
from .partition import PartitionConfig, PretrainedEmbeddings, partition
from .unlearn import PipelineState, UnlearnRequest, summarize, unlearn

_logger = logging.getLogger(__name__)


@dataclass
class BenchRow:
    strategy: str
    agg: str
    shards: int
    recall: dict
    ndcg: dict
    unlearn_seconds: float
    shard_seconds: float
    aggregator_seconds: float
    requests: int

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy, "agg": self.agg, "shards": self.shards,
            "recall": self.recall, "ndcg": self.ndcg, "unlearn_seconds": self.unlearn_seconds,
            "shard_seconds": self.shard_seconds, "aggregator_seconds": self.aggregator_seconds,
            "requests": self.requests,
        }


def sample_targets(train: Dataset, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(train), size=min(count, len(train)), replace=False)
    return [(int(train.users[p]), int(train.items[p])) for p in picks]


def _check_grid(values, name):
    values = list(values)
    if not values or any(not isinstance(v, (int, np.integer)) or v < 1 for v in values):
        raise ConfigError(f"{name} must be positive integers, got {values}")
    return [int(v) for v in values]


def run_bench(
    train: Dataset,
    val: Dataset | None,
    test: Dataset,
    embeddings: PretrainedEmbeddings | None,
    strategies=("inbp", "random"),
    aggs=("attention", "mean"),
    shard_grid=(5, 10, 20),
    train_cfg: TrainConfig | None = None,
    agg_cfg: AggregatorConfig | None = None,
    partition_cfg: PartitionConfig | None = None,
    requests: int = 3,
    cutoffs=(10, 20, 50),
    seed: int = 0,
) -> list:
    """One row per (strategy, K, aggregation mode).

    Submodels are trained once per (strategy, K) and shared by the
    aggregation modes; each row then times ``requests`` deletions applied to
    its own copy of the pipeline.
    """
    shard_grid = _check_grid(shard_grid, "shard counts")
    if requests < 0:
        raise ConfigError("requests must be nonnegative")
    train_cfg = train_cfg or TrainConfig(seed=seed)
    agg_cfg = agg_cfg or AggregatorConfig(seed=seed)
    partition_cfg = partition_cfg or PartitionConfig(seed=seed)
    targets = sample_targets(train, requests, seed)
    rows = []
    for strategy in strategies:
        for k in shard_grid:
            assignment = partition(strategy, train, embeddings, replace(partition_cfg, num_shards=k))
            base = PipelineState(train, assignment, train_cfg, agg_cfg, val, test)
            for i in range(k):
                base.train_shard(i)
            for mode in aggs:
                state = copy.copy(base)
                state.tables = list(base.tables)
                state.shard_seeds = list(base.shard_seeds)
                state.agg_cfg = replace(agg_cfg, mode=mode)
                state.train_aggregator()
                metrics = state.evaluate(cutoffs)
                reports = [unlearn(state, UnlearnRequest(t)) for t in targets]
                s = summarize(reports)
                row = BenchRow(
                    strategy, mode, k, metrics.recall, metrics.ndcg,
                    s["total_seconds"]["mean"], s["shard_retrain_seconds"]["mean"],
                    s["aggregator_retrain_seconds"]["mean"], len(reports),
                )
                _logger.info("bench %s", row.as_dict())
                rows.append(row)
    return rows


def format_rows(rows, cutoff: int = 20) -> str:
    head = f"{'strategy':<10}{'agg':<11}{'K':>4}{f'recall@{cutoff}':>12}{f'ndcg@{cutoff}':>11}{'unlearn_s':>11}{'shard_s':>10}{'agg_s':>9}"
    out = [head]
    for r in rows:
        out.append(
            f"{r.strategy:<10}{r.agg:<11}{r.shards:>4}{r.recall.get(cutoff, float('nan')):>12.4f}"
            f"{r.ndcg.get(cutoff, float('nan')):>11.4f}{r.unlearn_seconds:>11.3f}{r.shard_seconds:>10.3f}"
            f"{r.aggregator_seconds:>9.3f}"
        )
    return "\n".join(out) + "\n"
