"""Pipeline configuration: YAML parsing, defaults, validation, hashing.

Unknown keys are rejected rather than ignored so typos fail loudly.  The
config hash (and per-section hashes) drive the resume logic: a stage is
only skipped when the configuration slice it depends on is unchanged.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError


@dataclass
class GnnConfig:
    hidden: int = 128
    out: int = 64
    epochs: int = 200
    lr: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.hidden = int(self.hidden)
        self.out = int(self.out)
        self.epochs = int(self.epochs)
        self.lr = float(self.lr)
        self.seed = int(self.seed)
        if self.hidden < 1 or self.out < 1:
            raise ConfigError("gnn.hidden and gnn.out must be >= 1")
        if self.epochs < 0:
            raise ConfigError("gnn.epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("gnn.lr must be > 0")


@dataclass
class ClassifierConfig:
    backend: str = "similarity"
    checkpoint: str | None = None

    def __post_init__(self):
        if self.backend not in ("similarity", "transformer"):
            raise ConfigError(
                f"classifier.backend must be 'similarity' or 'transformer', "
                f"got {self.backend!r}"
            )


@dataclass
class EmbeddingsConfig:
    provider: str = "hash-64"
    cache_dir: str | None = None


@dataclass
class LlmConfig:
    backend: str = "mock"
    model: str = "gpt-3.5-turbo"
    base_url: str = "https://api.openai.com/v1"
    temperature: float = 0.7
    top_p: float = 0.95
    max_retries: int = 3

    def __post_init__(self):
        if self.backend not in ("http-chat", "mock"):
            raise ConfigError(
                f"llm.backend must be 'http-chat' or 'mock', got {self.backend!r}"
            )
        self.temperature = float(self.temperature)
        self.top_p = float(self.top_p)
        self.max_retries = int(self.max_retries)
        if self.temperature < 0:
            raise ConfigError("llm.temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ConfigError("llm.top_p must be in (0, 1]")
        if self.max_retries < 1:
            raise ConfigError("llm.max_retries must be >= 1")


@dataclass
class PathsConfig:
    work_dir: str = "work"


@dataclass
class PipelineConfig:
    """Everything a full run needs; every field has a usable default."""

    alpha: float = 0.5
    k: int = 5
    seed: int = 0
    paragraph_cap: int = 500
    gnn: GnnConfig = field(default_factory=GnnConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    embeddings: EmbeddingsConfig = field(default_factory=EmbeddingsConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        self.alpha = float(self.alpha)
        self.k = int(self.k)
        self.seed = int(self.seed)
        self.paragraph_cap = int(self.paragraph_cap)
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.paragraph_cap < 2:
            raise ConfigError("paragraph_cap must be >= 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = dict(data or {})
        kwargs = {}
        sections = {
            "gnn": GnnConfig,
            "classifier": ClassifierConfig,
            "embeddings": EmbeddingsConfig,
            "llm": LlmConfig,
            "paths": PathsConfig,
        }
        for name, section_cls in sections.items():
            if name in data:
                kwargs[name] = _build_section(section_cls, data.pop(name), name)
        scalar_keys = ("alpha", "k", "seed", "paragraph_cap")
        unknown = set(data) - set(scalar_keys)
        if unknown:
            raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
        for key in scalar_keys:
            if key in data:
                kwargs[key] = data[key]
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _build_section(section_cls, data, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config section {prefix!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(section_cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key: {prefix}.{sorted(unknown)[0]}")
    try:
        return section_cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section {prefix!r}: {exc}") from exc


def parse_config(path) -> PipelineConfig:
    """Load a YAML config file; an empty file yields all defaults.

    Raises:
        ConfigError: invalid YAML, unknown keys, or out-of-range values.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return PipelineConfig.from_dict(data)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def _hash_dict(data: dict) -> str:
    return hashlib.sha256(
        json.dumps(data, sort_keys=True).encode("utf-8")
    ).hexdigest()


def config_hash(config: PipelineConfig) -> str:
    return _hash_dict(config.to_dict())


def stage_config_slices(config: PipelineConfig) -> dict[str, str]:
    """Hash of the configuration each stage (cumulatively) depends on.

    Slices accumulate down the stage chain, so changing e.g. ``alpha``
    invalidates the graph stage and everything after it while leaving
    ingestion and pair scoring untouched.
    """
    accumulated: dict = {}
    hashes: dict[str, str] = {}

    def visit(stage: str, piece: dict) -> None:
        accumulated.update(piece)
        hashes[stage] = _hash_dict(accumulated)

    visit("ingest", {})
    visit("score_pairs", {
        "classifier": dataclasses.asdict(config.classifier),
        "embeddings": dataclasses.asdict(config.embeddings),
        "paragraph_cap": config.paragraph_cap,
    })
    visit("graph", {"alpha": config.alpha})
    visit("gnn", {"gnn": dataclasses.asdict(config.gnn)})
    visit("cluster", {"k": config.k, "seed": config.seed})
    visit("generate", {"llm": dataclasses.asdict(config.llm)})
    return hashes
