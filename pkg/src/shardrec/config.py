"""Pipeline configuration: flat ``key = value`` files plus overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

from .aggregation import MODES, AggregatorConfig, loss_for_model
from .errors import ConfigError, ParseError
from .models import MODELS, TrainConfig
from .partition import STRATEGIES, PartitionConfig


def _default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


@dataclass
class PipelineConfig:
    data: str = ""
    format: str = ""
    rating_threshold: float | None = None
    out: str = "run"
    model: str = "bpr"
    strategy: str = "inbp"
    agg: str = "attention"
    shards: int = 10
    capacity: int | None = None
    cutoffs: tuple = (10, 20, 50)
    seed: int = 0
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    # submodels
    dim: int = 64
    learning_rate: float = 0.05
    batch_size: int = 512
    max_epochs: int = 1000
    early_stop_patience: int = 10
    l2_reg: float = 1e-4
    negative_weight: float = 0.05
    num_layers: int = 2
    validate_shards: bool = True
    jobs: int = field(default_factory=_default_jobs)
    # partition
    partition_iterations: int = 50
    distance_combine: str = "product"
    # aggregator
    attention_dim: int = 32
    agg_learning_rate: float = AggregatorConfig.learning_rate
    agg_batch_size: int = AggregatorConfig.batch_size
    agg_epochs: int = AggregatorConfig.max_epochs
    agg_patience: int = AggregatorConfig.early_stop_patience
    agg_l2: float = AggregatorConfig.l2_reg
    freeze_transfer: bool = False
    strict_operand: bool = False

    def __post_init__(self):
        self.cutoffs = tuple(int(c) for c in self.cutoffs)
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.agg not in MODES:
            raise ConfigError(f"agg must be one of {MODES}, got {self.agg!r}")
        if self.shards < 1:
            raise ConfigError("shards must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ConfigError("cutoffs must be positive integers")
        # delegate the remaining checks
        self.train_config()
        self.partition_config()
        self.aggregator_config()

    def train_config(self, **over) -> TrainConfig:
        kw = dict(
            model=self.model, dim=self.dim, learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, early_stop_patience=self.early_stop_patience, l2_reg=self.l2_reg,
            negative_weight=self.negative_weight, num_layers=self.num_layers, seed=self.seed,
        )
        kw.update(over)
        return TrainConfig(**kw)

    def pretrain_config(self) -> TrainConfig:
        return self.train_config(model="wmf")

    def partition_config(self, shards: int | None = None) -> PartitionConfig:
        return PartitionConfig(
            num_shards=shards or self.shards, capacity=self.capacity,
            max_iterations=self.partition_iterations, seed=self.seed, combine=self.distance_combine,
        )

    def aggregator_config(self, mode: str | None = None) -> AggregatorConfig:
        return AggregatorConfig(
            mode=mode or self.agg, attention_dim=self.attention_dim, learning_rate=self.agg_learning_rate,
            batch_size=self.agg_batch_size, max_epochs=self.agg_epochs,
            early_stop_patience=self.agg_patience, l2_reg=self.agg_l2, loss=loss_for_model(self.model),
            negative_weight=self.negative_weight, freeze_transfer=self.freeze_transfer,
            strict_operand=self.strict_operand, seed=self.seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELD_TYPES = {f.name: f for f in fields(PipelineConfig)}


def _convert(key: str, raw: str):
    f = FIELD_TYPES[key]
    t = str(f.type)
    raw = raw.strip()
    try:
        if key == "cutoffs":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if "None" in t and raw.lower() in ("", "none", "auto"):
            return None
        if t.startswith("bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str, path="<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ParseError(f"unknown config key {key!r}", path, lineno)
        values[key] = _convert(key, value)
    return values


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read(), path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the file, then ``overrides`` (already typed)."""
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = value
    return PipelineConfig(**values)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {'auto' if value is None else value}")
    return "\n".join(lines) + "\n"
