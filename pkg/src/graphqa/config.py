"""Application configuration.

Config files are flat YAML or JSON mappings whose keys mirror AppConfig
fields. CLI flags override file values. API keys are never read from config
files: only the names of environment variables are configured, and the
clients read them at call time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .indexer import IndexConfig
from .pipeline import EngineOptions, ROUTES

logger = logging.getLogger(__name__)

LLM_BACKENDS = ("scripted", "remote")
EMBED_BACKENDS = ("hashed", "remote")


@dataclass
class AppConfig:
    # engine toggles
    qd: bool = True
    cr: bool = True
    qg: bool = True
    ld: bool = True
    ev: bool = True
    qe: bool = True
    # budgets
    max_rounds: int = 2
    max_subqueries: int = 6
    max_expansions: int = 3
    routing: str = "dual"
    # retrieval
    top_k: int = 30
    hop_expansion: int = 1
    hop_decay: float = 0.5
    # chunking / build
    chunk_size_units: int = 400
    overlap_units: int = 0
    extract_workers: int = 1
    extractor: str = "rules"  # rules | llm
    # embedding
    embed_backend: str = "hashed"
    embed_dim: int = 256
    embed_base_url: str = ""
    embed_model: str = ""
    embed_api_key_env: str = "GRAPHQA_EMBED_API_KEY"
    # chat model
    llm_backend: str = "scripted"
    llm_base_url: str = ""
    llm_model: str = ""
    llm_api_key_env: str = "GRAPHQA_LLM_API_KEY"
    temperature: float = 0.0
    transcript: str = ""
    strict_transcript: bool = False
    # judge (optional scoring model for evaluation)
    judge_enabled: bool = False
    judge_backend: str = "scripted"
    judge_base_url: str = ""
    judge_model: str = ""
    judge_api_key_env: str = "GRAPHQA_JUDGE_API_KEY"
    judge_transcript: str = ""
    # evaluation
    failure_threshold: float = 0.2
    eval_workers: int = 1
    flags: list[str] = field(default_factory=list)

    def validate(self) -> None:
        self.engine_options().validate()
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.hop_expansion < 0:
            raise ConfigError("hop_expansion must be >= 0")
        if not 0.0 < self.hop_decay <= 1.0:
            raise ConfigError("hop_decay must be in (0, 1]")
        if self.chunk_size_units < 1:
            raise ConfigError("chunk_size_units must be >= 1")
        if not 0 <= self.overlap_units < self.chunk_size_units:
            raise ConfigError("overlap_units must satisfy 0 <= overlap < size")
        if self.extract_workers < 1:
            raise ConfigError("extract_workers must be >= 1")
        if self.extractor not in ("rules", "llm"):
            raise ConfigError(f"unknown extractor {self.extractor!r}")
        if self.embed_backend not in EMBED_BACKENDS:
            raise ConfigError(f"unknown embed_backend {self.embed_backend!r}")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.embed_backend == "remote" and not self.embed_base_url:
            raise ConfigError("embed_backend=remote needs embed_base_url")
        if self.llm_backend not in LLM_BACKENDS:
            raise ConfigError(f"unknown llm_backend {self.llm_backend!r}")
        if self.llm_backend == "remote" and not self.llm_base_url:
            raise ConfigError("llm_backend=remote needs llm_base_url")
        # transcript presence is checked where a scripted client is actually
        # built; indexing with the rule extractor needs no chat model at all
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.judge_enabled:
            if self.judge_backend not in LLM_BACKENDS:
                raise ConfigError(f"unknown judge_backend {self.judge_backend!r}")
            if self.judge_backend == "remote" and not self.judge_base_url:
                raise ConfigError("judge_backend=remote needs judge_base_url")
            if self.judge_backend == "scripted" and not self.judge_transcript:
                raise ConfigError("judge_backend=scripted needs judge_transcript")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ConfigError("failure_threshold must be in [0, 1]")
        if self.eval_workers < 1:
            raise ConfigError("eval_workers must be >= 1")
        if self.routing not in ROUTES:
            raise ConfigError(f"unknown routing {self.routing!r}")

    def engine_options(self) -> EngineOptions:
        return EngineOptions(
            qd=self.qd, cr=self.cr, qg=self.qg,
            ld=self.ld, ev=self.ev, qe=self.qe,
            max_rounds=self.max_rounds,
            max_subqueries=self.max_subqueries,
            max_expansions=self.max_expansions,
            routing=self.routing,
        )

    def index_config(self) -> IndexConfig:
        return IndexConfig(
            chunk_size_units=self.chunk_size_units,
            overlap_units=self.overlap_units,
            extract_workers=self.extract_workers,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(AppConfig)}


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> AppConfig:
    """Build the config from an optional file plus explicit overrides.
    Unknown keys and type mismatches fail fast."""
    values: dict = {}
    if path is not None:
        values.update(_read_config_file(Path(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    config = AppConfig()
    for key, value in values.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(config, key)
        coerced = _coerce(key, value, current)
        setattr(config, key, coerced)
    config.validate()
    return config


def _read_config_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad YAML in {path}: {exc}") from exc
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON in {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return data


def _coerce(key: str, value, current):
    """Light type coercion so YAML scalars and CLI strings both land."""
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"config key {key!r} needs a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool):
            raise ConfigError(f"config key {key!r} needs an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} needs an integer, got {value!r}") from None
    if isinstance(current, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} needs a number, got {value!r}") from None
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} needs a string, got {value!r}")
        return value
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"config key {key!r} needs a list, got {value!r}")
        return value
    return value
