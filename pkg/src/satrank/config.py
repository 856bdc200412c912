"""Run configuration: nested dataclasses, a JSON file, dotted overrides.

Every leaf field ``section.name`` can be set in the JSON config file as
``{"section": {"name": value}}`` or on the command line as
``--section.name value``. Lists of ints are written comma-separated.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from satrank.errors import ConfigError

MODEL_KINDS = ("cnn-gnn", "rs", "lasso", "cnn-mse")
SPLIT_POLICIES = ("random-fraction", "on-date")
PERIODS = ("day", "week", "month")


@dataclass
class PathsConfig:
    corpus: str = ""
    embeddings: str = ""
    work_dir: str = "work"
    checkpoint: str = ""             # default <work_dir>/model.ckpt
    calibrated_checkpoint: str = ""  # default <work_dir>/model.calibrated.ckpt
    input: str = ""                  # corpus to score
    scores: str = ""                 # comma-separated score CSVs for evaluate
    labels: str = ""                 # line-JSON with id and label
    report_dir: str = ""             # default <work_dir>/report
    aggregates: str = ""             # default <work_dir>/aggregates.csv


@dataclass
class TextConfig:
    min_count: int = 1
    max_vocab: int = 0               # 0 = unlimited
    max_len: int = 2048
    last_fraction: float = 0.25
    pca_dims: int = 128
    max_terms: int = 5000            # bag-of-words width for the linear baselines


@dataclass
class SplitConfig:
    policy: str = "random-fraction"
    val_fraction: float = 0.2
    test_fraction: float = 0.2


@dataclass
class EncoderConfig:
    widths: list[int] = field(default_factory=lambda: [3, 4, 5])
    maps: int = 100


@dataclass
class GnnConfig:
    group_size: int = 5
    groups_per_batch: int = 64
    alpha: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    l2: float = 0.5
    dropout: float = 0.5
    epochs: int = 50
    steps_per_epoch: int = 0         # 0 = one pass over the training split
    patience: int = 10
    anchors: int = 16
    anchor_pool: int = 1000
    edge_dim: int = 0                # 0 = encoder output width
    message_dim: int = 0


@dataclass
class RsConfig:
    pairs_per_step: int = 320
    alpha: float = 1e-2
    epochs: int = 20


@dataclass
class LassoConfig:
    grid: int = 5
    max_iters: int = 1000


@dataclass
class CnnMseConfig:
    batch_size: int = 64


@dataclass
class CalibrateConfig:
    split: str = "val"


@dataclass
class EvalConfig:
    relevance_rule: str = "label <= 7"
    scale_lo: float = 1.0
    scale_hi: float = 10.0
    column: str = "raw"
    split: str = "test"
    show_runtime: bool = False


@dataclass
class ScoreConfig:
    timestamp: str = ""              # pin the scoring timestamp; empty = now (UTC)


@dataclass
class AggregateConfig:
    group_key: str = "rep"
    period: str = "day"


@dataclass
class RunConfig:
    model: str = "cnn-gnn"
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    text: TextConfig = field(default_factory=TextConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    rs: RsConfig = field(default_factory=RsConfig)
    lasso: LassoConfig = field(default_factory=LassoConfig)
    cnn_mse: CnnMseConfig = field(default_factory=CnnMseConfig)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    aggregate: AggregateConfig = field(default_factory=AggregateConfig)

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.split.policy not in SPLIT_POLICIES:
            raise ConfigError(f"split.policy must be one of {SPLIT_POLICIES}")
        for name in ("val_fraction", "test_fraction"):
            v = getattr(self.split, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"split.{name} must be in (0, 1), got {v}")
        if self.split.val_fraction + self.split.test_fraction >= 1.0:
            raise ConfigError("split.val_fraction + split.test_fraction must leave a training split")
        if self.aggregate.period not in PERIODS:
            raise ConfigError(f"aggregate.period must be one of {PERIODS}")
        if not 0.0 < self.text.last_fraction <= 1.0:
            raise ConfigError("text.last_fraction must be in (0, 1]")
        if self.eval.column not in ("raw", "calibrated"):
            raise ConfigError("eval.column must be 'raw' or 'calibrated'")
        if self.gnn.group_size < 2:
            raise ConfigError("gnn.group_size must be at least 2")
        return self

    # derived paths -----------------------------------------------------
    def work_path(self, name: str) -> Path:
        return Path(self.paths.work_dir) / name

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.paths.checkpoint) if self.paths.checkpoint else self.work_path("model.ckpt")

    @property
    def calibrated_path(self) -> Path:
        if self.paths.calibrated_checkpoint:
            return Path(self.paths.calibrated_checkpoint)
        return self.work_path("model.calibrated.ckpt")

    @property
    def report_dir(self) -> Path:
        return Path(self.paths.report_dir) if self.paths.report_dir else self.work_path("report")

    @property
    def aggregates_path(self) -> Path:
        return Path(self.paths.aggregates) if self.paths.aggregates else self.work_path("aggregates.csv")


def leaf_fields(obj=None, prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield ``(dotted_name, default_value)`` for every leaf field."""
    obj = RunConfig() if obj is None else obj
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from leaf_fields(value, name + ".")
        else:
            yield name, value


def coerce(name: str, template: Any, raw: Any) -> Any:
    """Convert ``raw`` (CLI string or JSON value) to the type of ``template``."""
    try:
        if isinstance(template, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, list):
            if isinstance(raw, str):
                return [int(x) for x in raw.split(",") if x.strip()]
            return [int(x) for x in raw]
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def set_dotted(cfg: RunConfig, name: str, raw: Any) -> None:
    parts = name.split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p) or not dataclasses.is_dataclass(getattr(target, p)):
            raise ConfigError(f"unknown config section in {name!r}")
        target = getattr(target, p)
    leaf = parts[-1]
    if not hasattr(target, leaf) or dataclasses.is_dataclass(getattr(target, leaf)):
        raise ConfigError(f"unknown config field {name!r}")
    setattr(target, leaf, coerce(name, getattr(target, leaf), raw))


def _flatten(obj: dict, prefix: str = "") -> Iterator[tuple[str, Any]]:
    for k, v in obj.items():
        if isinstance(v, dict):
            yield from _flatten(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", v


def load_config(path: str | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for name, value in _flatten(data):
            set_dotted(cfg, name, value)
    for name, value in (overrides or {}).items():
        set_dotted(cfg, name, value)
    return cfg.validate()


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
