"""Configuration management for the skeleton search engine.

Settings come from, in increasing precedence: defaults, ``AUTOMR_*``
environment variables (and ``.env``), a flat ``section.key=value`` config
file, and command-line flags.
"""

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..core.exceptions import ConfigurationError
from ..core.models import Strategy, TaskKind

SECTIONS = ("search", "sampler", "policy", "backend", "run")

# Short names accepted in config files, mapped to field names.
FIELD_ALIASES = {
    "search": {"N": "batch_queries", "n": "batch_queries", "M": "samples_per_query", "m": "samples_per_query"},
}


class SamplerSettings(BaseModel):
    """Per-episode sampling limits."""

    model_config = ConfigDict(extra="forbid")

    budget: int = Field(1024, ge=0, description="Token budget B over generated steps")
    max_nodes: int = Field(64, ge=1, description="Safety cap on skeleton size")
    include_termination_in_logprob: bool = Field(True)
    answer_max_tokens: int = Field(256, ge=1, description="Cap on final-answer tokens")


class SearchSettings(BaseModel):
    """Outer REINFORCE loop."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    batch_queries: int = Field(8, ge=1, validation_alias=AliasChoices("N", "n", "batch_queries"))
    samples_per_query: int = Field(16, ge=1, validation_alias=AliasChoices("M", "m", "samples_per_query"))
    eta: float = Field(5e-4, gt=0, description="Learning rate")
    clip_norm: float = Field(1.0, gt=0, description="Max global gradient L2 norm")
    iterations: int = Field(300, ge=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    reward_baseline: float = Field(0.0, description="Constant subtracted from rewards")
    matcher: Literal["normalized", "regex"] = "normalized"
    concurrency: int = Field(16, ge=1, description="Episodes in flight per batch")
    eval_greedy: bool = False
    rs_candidates: int = Field(48, ge=1)


class PolicySettings(BaseModel):
    """Policy network shape."""

    model_config = ConfigDict(extra="forbid")

    d_c: int = Field(64, gt=0)
    d_s: int = Field(32, gt=0)
    hidden: int = Field(256, gt=0)
    condition_on_zero: bool = True


class BackendSettings(BaseModel):
    """Reasoning backend selection and parameters."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["mock", "scripted", "http"] = "mock"
    seed: int = 0
    step_words: int = Field(24, ge=1, description="Mock step length cap in words")
    scripted_target: Strategy = Strategy.RECALL
    scripted_queries: int = Field(64, ge=1)
    scripted_step_words: int = Field(12, ge=1)
    base_url: Optional[str] = None
    model: Optional[str] = None
    embedding_model: Optional[str] = None
    temperature: float = Field(0.7, ge=0)
    max_in_flight: int = Field(8, ge=1)
    timeout: float = Field(60.0, gt=0)
    system_prompt: str = "Solve the problem step by step."

    @field_validator("scripted_target", mode="before")
    @classmethod
    def parse_strategy(cls, v: Any) -> Strategy:
        strategy = Strategy.parse(v) if isinstance(v, str) else Strategy(v)
        if strategy is Strategy.ZERO:
            raise ValueError("scripted target cannot be Zero")
        return strategy


class RunSettings(BaseModel):
    """Paths, seeding and logging for one CLI run."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    train_path: Optional[str] = None
    eval_path: Optional[str] = None
    out_dir: str = "runs/latest"
    checkpoint_every: int = Field(50, ge=1, description="Checkpoint interval K")
    catalog_path: Optional[str] = None
    task: TaskKind = TaskKind.GENERIC
    log_level: str = "INFO"
    json_logs: bool = False

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate logging level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        if v.upper() not in valid_levels:
            raise ValueError(f"Invalid log level. Must be one of: {valid_levels}")
        return v.upper()


class Settings(BaseSettings):
    """Application settings with environment variable support."""

    model_config = SettingsConfigDict(
        env_prefix="AUTOMR_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    search: SearchSettings = Field(default_factory=SearchSettings)
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    policy: PolicySettings = Field(default_factory=PolicySettings)
    backend: BackendSettings = Field(default_factory=BackendSettings)
    run: RunSettings = Field(default_factory=RunSettings)

    api_key: Optional[str] = Field(None, description="Bearer token for the http backend")

    def validate_for_dataset(self) -> None:
        """Commands that read a dataset need a path unless the scripted backend synthesizes one."""
        if self.backend.kind != "scripted" and not self.run.train_path:
            raise ConfigurationError(
                "Training dataset path is required",
                "Set run.train_path in the config file or use --dataset",
            )

    def validate_for_http(self) -> None:
        """Validate settings required by the http backend."""
        if self.backend.kind != "http":
            return
        if not self.backend.base_url:
            raise ConfigurationError(
                "Base URL is required for the http backend",
                "Set backend.base_url in the config file",
            )
        if not self.backend.model:
            raise ConfigurationError(
                "Model name is required for the http backend",
                "Set backend.model in the config file",
            )
        if not self.api_key:
            raise ConfigurationError(
                "API key is required for the http backend",
                "Set the AUTOMR_API_KEY environment variable",
            )

    @property
    def out_path(self) -> Path:
        return Path(self.run.out_dir)


def parse_config_file(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    """Parse a flat ``section.key=value`` file into nested sections."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigurationError(f"Config file not found: {config_path}")

    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in dotenv_values(config_path).items():
        section, dot, field = key.partition(".")
        if not dot or section.lower() not in SECTIONS:
            raise ConfigurationError(
                f"Invalid config key: {key}",
                f"Keys must look like <section>.<field> with section one of {', '.join(SECTIONS)}",
            )
        section = section.lower()
        field = FIELD_ALIASES.get(section, {}).get(field, field)
        nested.setdefault(section, {})[field] = value
    return nested


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(dict(merged[key]), value)
        elif value is not None:
            merged[key] = value
    return merged


def load_settings(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Settings:
    """Load settings from the environment, an optional config file and overrides."""
    load_dotenv()

    try:
        data = Settings().model_dump()
        if config_path is not None:
            data = _merge(data, parse_config_file(config_path))
        if overrides:
            data = _merge(data, overrides)
        return Settings(**data)
    except ConfigurationError:
        raise
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(f"Invalid configuration value for {key}", first["msg"])
    except Exception as e:
        raise ConfigurationError(f"Failed to load configuration: {e}")


def setup_logging(settings: Settings) -> None:
    """Configure structured logging."""
    from .logging import setup_structlog
    setup_structlog(settings.run.log_level, json_logs=settings.run.json_logs)
