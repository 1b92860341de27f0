"""Sharded collaborative filtering with exact unlearning.

Training data is split into balanced shards, one embedding model is trained
per shard, and an attention network combines the shard embeddings. Deleting
an interaction only retrains the shard that held it plus the combiner.
"""
from .aggregation import Aggregator, AggregatorConfig, aggregate, attention_weights, train_aggregator, transfer
from .dataset import Dataset, Interaction, SplitSpec, load_interactions, split
from .errors import ShardrecError
from .metrics import MetricBundle, evaluate, ndcg_at_n, rank_items, recall_at_n
from .models import EmbeddingTable, TrainConfig, score, train_bpr, train_lightgcn, train_model, train_wmf
from .partition import (
    PartitionConfig,
    PretrainedEmbeddings,
    ShardAssignment,
    ibp_partition,
    inbp_partition,
    locate_shard,
    random_partition,
    ubp_partition,
)
from .unlearn import PipelineState, UnlearnReport, UnlearnRequest, batch_unlearn, build_pipeline, unlearn

__version__ = "0.1.0"
