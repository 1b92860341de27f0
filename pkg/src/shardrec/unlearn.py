"""Sharded training pipeline and exact unlearning.

A :class:`PipelineState` owns the global training set, the shard
assignment, one submodel per shard and the aggregator. Deleting an
interaction retrains only the submodel of the shard that held it (from a
fresh initialization) and then the aggregator, so afterwards no parameter
depends on the deleted point.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .aggregation import Aggregator, AggregatorConfig, train_aggregator
from .dataset import Dataset
from .errors import BatchAbortedError, ConfigError, NotFoundError
from .metrics import DEFAULT_CUTOFFS, MetricBundle, evaluate
from .models import EmbeddingTable, TrainConfig, TrainHistory, pretrain_for_partition, train_model
from .partition import PartitionConfig, PretrainedEmbeddings, ShardAssignment, locate_shard, partition

_logger = logging.getLogger(__name__)

SEED_POLICIES = ("reuse_original", "fresh")


@dataclass(frozen=True)
class UnlearnRequest:
    target: tuple
    seed_policy: str = "reuse_original"

    def __post_init__(self):
        if self.seed_policy not in SEED_POLICIES:
            raise ConfigError(f"unknown seed policy {self.seed_policy!r}; expected one of {SEED_POLICIES}")
        object.__setattr__(self, "target", (int(self.target[0]), int(self.target[1])))


@dataclass
class UnlearnReport:
    target: tuple
    shard: int
    shard_retrain_seconds: float
    aggregator_retrain_seconds: float
    total_seconds: float
    full_retrain_seconds: float | None = None
    utility_after: MetricBundle | None = None
    retrained: bool = True
    covers: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"] = list(self.target)
        d["utility_after"] = None if self.utility_after is None else self.utility_after.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class PipelineState:
    """Everything needed to answer deletion requests.

    ``train`` is the live global training set (deletions applied);
    ``shard_seeds[i]`` is the seed submodel ``i`` was last trained with.
    """

    train: Dataset
    assignment: ShardAssignment
    train_cfg: TrainConfig
    agg_cfg: AggregatorConfig
    val: Dataset | None = None
    test: Dataset | None = None
    tables: list = field(default_factory=list)
    aggregator: Aggregator | None = None
    shard_seeds: list = field(default_factory=list)
    validate_shards: bool = True
    embeddings: PretrainedEmbeddings | None = None
    strategy: str | None = None
    partition_cfg: PartitionConfig | None = None
    retrain_count: int = 0
    _fresh_seed: int = 0

    @property
    def num_shards(self) -> int:
        return self.assignment.num_shards

    def shard_data(self, shard: int) -> Dataset:
        return self.assignment.shard_data(self.train, shard)

    def original_seed(self, shard: int) -> int:
        return self.train_cfg.seed + shard

    def train_shard(self, shard: int, seed: int | None = None) -> EmbeddingTable:
        seed = self.original_seed(shard) if seed is None else seed
        val = self.val if self.validate_shards else None
        table = train_model(self.shard_data(shard), self.train_cfg.with_seed(seed), val, TrainHistory())
        while len(self.tables) <= shard:
            self.tables.append(None)
            self.shard_seeds.append(None)
        self.tables[shard] = table
        self.shard_seeds[shard] = seed
        self.retrain_count += 1
        return table

    def train_aggregator(self) -> Aggregator:
        agg = Aggregator(self.tables, self.agg_cfg)
        if agg.mode != "mean":
            train_aggregator(agg, self.train, self.val)
        self.aggregator = agg
        return agg

    def fit(self, jobs: int = 1) -> "PipelineState":
        """Train every submodel (``jobs`` processes), then the aggregator."""
        self.tables, self.shard_seeds = [], []
        if jobs > 1 and self.num_shards > 1:
            val = self.val if self.validate_shards else None
            work = [(self.shard_data(i), self.train_cfg.with_seed(self.original_seed(i)), val)
                    for i in range(self.num_shards)]
            with ProcessPoolExecutor(max_workers=min(jobs, self.num_shards)) as pool:
                self.tables = list(pool.map(_train_job, work))
            self.shard_seeds = [self.original_seed(i) for i in range(self.num_shards)]
            self.retrain_count += self.num_shards
        else:
            for i in range(self.num_shards):
                t = time.perf_counter()
                self.train_shard(i)
                _logger.info("shard %d trained in %.2fs", i, time.perf_counter() - t)
        self.train_aggregator()
        return self

    def model(self):
        return self.aggregator.model()

    def evaluate(self, cutoffs=DEFAULT_CUTOFFS) -> MetricBundle:
        if self.test is None:
            raise ConfigError("pipeline has no test split to evaluate on")
        seen = self.train if self.val is None else self.train.union(self.val)
        return evaluate(self.model(), seen, self.test, cutoffs)

    def next_fresh_seed(self) -> int:
        self._fresh_seed += 1
        return int(np.random.SeedSequence([self.train_cfg.seed, self._fresh_seed]).generate_state(1)[0])


def _train_job(args):
    data, cfg, val = args
    return train_model(data, cfg, val, TrainHistory())


def build_pipeline(
    train: Dataset,
    strategy: str,
    train_cfg: TrainConfig,
    agg_cfg: AggregatorConfig,
    partition_cfg: PartitionConfig,
    val: Dataset | None = None,
    test: Dataset | None = None,
    embeddings: PretrainedEmbeddings | None = None,
    pretrain_cfg: TrainConfig | None = None,
    validate_shards: bool = True,
    jobs: int = 1,
) -> PipelineState:
    """Pretrain (if needed), partition, and train submodels and aggregator."""
    if embeddings is None and strategy != "random":
        cfg = pretrain_cfg or TrainConfig(model="wmf", seed=train_cfg.seed)
        embeddings = pretrain_for_partition(train, cfg, val)
    assignment = partition(strategy, train, embeddings, partition_cfg)
    state = PipelineState(
        train, assignment, train_cfg, agg_cfg, val, test,
        validate_shards=validate_shards, embeddings=embeddings,
        strategy=strategy, partition_cfg=partition_cfg,
    )
    return state.fit(jobs)


def _check_present(state: PipelineState, y) -> int:
    if y not in state.train:
        raise NotFoundError(f"interaction {tuple(y)} is not in the training set")
    return locate_shard(state.assignment, y)


def _seed_for(state: PipelineState, shard: int, policy: str) -> int:
    return state.original_seed(shard) if policy == "reuse_original" else state.next_fresh_seed()


def _utility(state: PipelineState, evaluate_after: bool):
    if not evaluate_after or state.test is None:
        return None
    return state.evaluate()


def unlearn(state: PipelineState, req: UnlearnRequest, evaluate_after: bool = False, repartition: bool = False) -> UnlearnReport:
    """Delete ``req.target`` and retrain its shard and the aggregator.

    The partition is left as it was unless ``repartition`` is set, in which
    case embeddings, partition and every submodel are rebuilt from the
    reduced data.
    """
    shard = _check_present(state, req.target)
    state.train = state.train.remove(req.target)
    if repartition:
        return _unlearn_repartition(state, req, shard, evaluate_after)
    start = time.perf_counter()
    state.train_shard(shard, _seed_for(state, shard, req.seed_policy))
    mid = time.perf_counter()
    state.train_aggregator()
    end = time.perf_counter()
    _logger.info("unlearned %s from shard %d in %.2fs", req.target, shard, end - start)
    return UnlearnReport(req.target, shard, mid - start, end - mid, end - start,
                         utility_after=_utility(state, evaluate_after))


def _unlearn_repartition(state, req, shard, evaluate_after):
    start = time.perf_counter()
    if state.strategy != "random":
        state.embeddings = pretrain_for_partition(state.train, TrainConfig(model="wmf", seed=state.train_cfg.seed), state.val)
    state.assignment = partition(state.strategy or state.assignment.kind, state.train, state.embeddings,
                                 state.partition_cfg or PartitionConfig(state.num_shards))
    for i in range(state.num_shards):
        state.train_shard(i, _seed_for(state, i, req.seed_policy))
    mid = time.perf_counter()
    state.train_aggregator()
    end = time.perf_counter()
    return UnlearnReport(req.target, shard, mid - start, end - mid, end - start,
                         utility_after=_utility(state, evaluate_after))


def full_retrain_baseline(state: PipelineState, req: UnlearnRequest, evaluate_after: bool = False) -> UnlearnReport:
    """Train the base model on all of ``Y \\ {y}``; the state is not modified."""
    data = state.train.remove(req.target) if req.target in state.train else state.train
    seed = state.train_cfg.seed if req.seed_policy == "reuse_original" else state.next_fresh_seed()
    start = time.perf_counter()
    table = train_model(data, state.train_cfg.with_seed(seed), state.val, TrainHistory())
    elapsed = time.perf_counter() - start
    utility = None
    if evaluate_after and state.test is not None:
        seen = data if state.val is None else data.union(state.val)
        utility = evaluate(table, seen, state.test)
    report = UnlearnReport(req.target, -1, 0.0, 0.0, elapsed, elapsed, utility)
    report.table = table
    return report


def batch_unlearn(state: PipelineState, requests, coalesce_same_shard: bool = False,
                  evaluate_after: bool = False) -> list:
    """Apply requests in order; returns one report per request.

    With ``coalesce_same_shard`` a run of consecutive requests hitting the same
    shard triggers a single retrain; its cost is carried by the last report
    of the run and the others are marked ``retrained=False``.
    """
    reports = []
    requests = list(requests)
    i = 0
    while i < len(requests):
        req = requests[i]
        try:
            if not coalesce_same_shard:
                reports.append(unlearn(state, req, evaluate_after))
                i += 1
                continue
            shard = _check_present(state, req.target)
            group = [req]
            while i + len(group) < len(requests):
                nxt = requests[i + len(group)]
                if nxt.target not in state.train or nxt.seed_policy != req.seed_policy:
                    break
                if locate_shard(state.assignment, nxt.target) != shard or nxt.target in [g.target for g in group]:
                    break
                group.append(nxt)
            for g in group[:-1]:
                state.train = state.train.remove(g.target)
                reports.append(UnlearnReport(g.target, shard, 0.0, 0.0, 0.0, retrained=False, covers=0))
            last = unlearn(state, group[-1], evaluate_after)
            last.covers = len(group)
            reports.append(last)
            i += len(group)
        except NotFoundError as exc:
            raise BatchAbortedError(
                f"request {i} ({req.target}) aborted the batch: {exc}", reports, exc
            ) from exc
    return reports


def summarize(reports, full_retrain_seconds: float | None = None) -> dict:
    """Mean and max of each timing column over reports that retrained."""
    rows = [r for r in reports if r.retrained]
    out = {"requests": len(reports), "retrains": len(rows)}
    for key in ("shard_retrain_seconds", "aggregator_retrain_seconds", "total_seconds"):
        vals = np.array([getattr(r, key) for r in rows], dtype=float)
        out[key] = {"mean": float(vals.mean()) if vals.size else 0.0, "max": float(vals.max()) if vals.size else 0.0}
    if full_retrain_seconds is not None:
        out["full_retrain_seconds"] = float(full_retrain_seconds)
    return out


def summary_table(reports, full_retrain_seconds: float | None = None) -> str:
    s = summarize(reports, full_retrain_seconds)
    lines = [f"{'':<22}{'mean (s)':>12}{'max (s)':>12}"]
    for label, key in (("Shard Training", "shard_retrain_seconds"),
                       ("Aggregation Training", "aggregator_retrain_seconds"),
                       ("Total", "total_seconds")):
        lines.append(f"{label:<22}{s[key]['mean']:>12.3f}{s[key]['max']:>12.3f}")
    if full_retrain_seconds is not None:
        lines.append(f"{'Retrain':<22}{full_retrain_seconds:>12.3f}{full_retrain_seconds:>12.3f}")
    return "\n".join(lines) + "\n"
