"""Configuration: every tunable with its default, loadable from JSON overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .concept_graph import GraphConfig
from .query_pipeline import PipelineConfig
from .retrieval import RetrievalConfig, RoutingConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


@dataclass(frozen=True)
class ChunkingConfig:
    target_tokens: int = 300
    overlap_tokens: int = 50


@dataclass(frozen=True)
class RqConfig:
    level_sizes: tuple = (96, 24, 12)
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-6
    fuzziness: float = 2.0


@dataclass(frozen=True)
class SummaryConfig:
    enabled: bool = True
    budget: int = 30
    representatives: int = 5


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "file"
    endpoint: str | None = None
    vector_file: str | None = None
    dimension: int = 1024
    cache: bool = True
    timeout: float = 30.0
    auth_header: str | None = None


@dataclass(frozen=True)
class ClientConfig:
    mode: str = "stub"
    endpoint: str | None = None
    timeout: float = 60.0


@dataclass(frozen=True)
class Config:
    chunking: ChunkingConfig = ChunkingConfig()
    rq: RqConfig = RqConfig()
    graph: GraphConfig = GraphConfig()
    summaries: SummaryConfig = SummaryConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    pipeline: PipelineConfig = PipelineConfig()
    provider: ProviderConfig = ProviderConfig()
    client: ClientConfig = ClientConfig()

    def to_dict(self) -> dict:
        return _to_plain(self)

    def replace(self, section: str, **changes) -> "Config":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    defaults = cls()
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {where}.{key}" if where else f"unknown config key {key}")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(type(current), value, f"{where}.{key}" if where else key)
        elif isinstance(current, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> Config:
    return _build(Config, data, "")


def load_config(path) -> Config:
    """Load JSON overrides on top of the defaults.

    A relative ``provider.vector_file`` is resolved against the config file's
    directory.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_dict(data)
    vf = cfg.provider.vector_file
    if vf and not Path(vf).is_absolute():
        cfg = cfg.replace("provider", vector_file=str((path.parent / vf).resolve()))
    return cfg


def validate(cfg: Config) -> Config:
    c = cfg.chunking
    if c.target_tokens < 1 or not 0 <= c.overlap_tokens < c.target_tokens:
        raise ConfigError("chunking needs target_tokens >= 1 and 0 <= overlap < target")
    if not cfg.rq.level_sizes or any(int(k) < 1 for k in cfg.rq.level_sizes):
        raise ConfigError("rq.level_sizes must be positive integers")
    if cfg.rq.fuzziness <= 1:
        raise ConfigError("rq.fuzziness must be > 1")
    if cfg.summaries.budget < 0:
        raise ConfigError("summaries.budget must be >= 0")
    if cfg.provider.mode not in ("file", "remote", "hashing"):
        raise ConfigError(f"provider.mode must be file, remote or hashing, got {cfg.provider.mode!r}")
    if cfg.client.mode not in ("stub", "remote"):
        raise ConfigError(f"client.mode must be stub or remote, got {cfg.client.mode!r}")
    if len(cfg.retrieval.weights) != 3:
        raise ConfigError("retrieval.weights needs three values")
    return cfg


__all__ = [
    "ChunkingConfig", "ClientConfig", "Config", "ConfigError", "GraphConfig", "PipelineConfig",
    "ProviderConfig", "RetrievalConfig", "RoutingConfig", "RqConfig", "SummaryConfig",
    "config_from_dict", "load_config", "validate",
]

