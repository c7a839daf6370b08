"""Base command interface and shared wiring for the CLI."""

import asyncio
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, List, Optional

from rich.console import Console

from ..core.config import Settings
from ..core.exceptions import AutoMRError, ConfigurationError
from ..core.logging import get_logger
from ..core.models import DatasetRecord
from ..services.checkpoint_service import load_checkpoint
from ..services.dataset_service import load_dataset
from ..services.dynamic_sampler import SamplerConfig
from ..services.http_backend import HttpBackend
from ..services.policy_net import PolicyDims, PolicyParameters, init_params
from ..services.reasoning_backend import MockBackend, ReasoningBackend, ScriptedBackend, ScriptedEnvSpec
from ..services.reinforce_search import SearchConfig
from ..services.strategy_catalog import StrategyCatalog


def create_catalog(settings: Settings) -> StrategyCatalog:
    if settings.run.catalog_path:
        return StrategyCatalog.from_file(settings.run.catalog_path)
    return StrategyCatalog()


def scripted_spec(settings: Settings) -> ScriptedEnvSpec:
    return ScriptedEnvSpec(target_strategy=settings.backend.scripted_target, task=settings.run.task)


def create_backend(settings: Settings, catalog: StrategyCatalog) -> ReasoningBackend:
    """Backend selected by ``backend.kind``."""
    backend = settings.backend
    d_c = settings.policy.d_c
    if backend.kind == "mock":
        return MockBackend(d_c=d_c, seed=backend.seed, step_words=backend.step_words)
    if backend.kind == "scripted":
        return ScriptedBackend(
            scripted_spec(settings),
            catalog=catalog,
            d_c=d_c,
            step_words=backend.scripted_step_words,
        )
    if backend.kind == "http":
        settings.validate_for_http()
        return HttpBackend(
            base_url=backend.base_url or "",
            model=backend.model or "",
            api_key=settings.api_key or "",
            d_c=d_c,
            embedding_model=backend.embedding_model,
            temperature=backend.temperature,
            system_prompt=backend.system_prompt,
            max_in_flight=backend.max_in_flight,
            timeout=backend.timeout,
        )
    raise ConfigurationError(f"Unknown backend: {backend.kind}")


def sampler_config(settings: Settings) -> SamplerConfig:
    return SamplerConfig(
        budget=settings.sampler.budget,
        max_nodes=settings.sampler.max_nodes,
        include_termination_in_logprob=settings.sampler.include_termination_in_logprob,
        answer_max_tokens=settings.sampler.answer_max_tokens,
        condition_on_zero=settings.policy.condition_on_zero,
        seed=settings.run.seed,
    )


def search_config(settings: Settings) -> SearchConfig:
    search = settings.search
    return SearchConfig(
        N=search.batch_queries,
        M=search.samples_per_query,
        eta=search.eta,
        clip_norm=search.clip_norm,
        iterations=search.iterations,
        sampler=sampler_config(settings),
        seed=settings.run.seed,
        optimizer=search.optimizer,
        reward_baseline=search.reward_baseline,
        concurrency=search.concurrency,
        eval_greedy=search.eval_greedy,
        checkpoint_every=settings.run.checkpoint_every,
    )


def policy_dims(settings: Settings) -> PolicyDims:
    return PolicyDims(d_c=settings.policy.d_c, d_s=settings.policy.d_s, h=settings.policy.hidden)


class BaseCommand(ABC):
    """Base class for all CLI commands."""

    def __init__(self, settings: Settings, console: Optional[Console] = None):
        self.settings = settings
        self.console = console or Console()
        self.logger = get_logger(self.__class__.__name__)

    @abstractmethod
    def validate_settings(self) -> None:
        """Validate settings required for this command."""
        pass

    @abstractmethod
    async def execute(self, **kwargs: Any) -> None:
        """Execute the command."""
        pass

    def run(self, **kwargs: Any) -> None:
        """Run the command with proper error handling."""
        try:
            self.validate_settings()
            asyncio.run(self.execute(**kwargs))
        except AutoMRError as e:
            self.logger.error("Command failed", error=e.message, details=e.details)
            raise
        except Exception as e:
            self.logger.error("Unexpected error", error=str(e), exc_info=True)
            raise

    def load_records(self, path: Optional[str]) -> List[DatasetRecord]:
        """Dataset from ``path``, or the synthesized scripted one when no path is set."""
        if path:
            return load_dataset(path)
        if self.settings.backend.kind == "scripted":
            return scripted_spec(self.settings).make_dataset(self.settings.backend.scripted_queries)
        raise ConfigurationError(
            "Dataset path is required",
            "Set run.train_path / run.eval_path in the config file or use --dataset",
        )

    def load_params(self, checkpoint: Optional[str]) -> PolicyParameters:
        """Checkpoint weights, or a fresh initialization from the run seed."""
        if checkpoint:
            params = load_checkpoint(checkpoint)
            if params.dims.d_c != self.settings.policy.d_c:
                raise ConfigurationError(
                    "Checkpoint does not match the configured policy",
                    f"checkpoint d_c={params.dims.d_c}, policy.d_c={self.settings.policy.d_c}",
                )
            return params
        return init_params(policy_dims(self.settings), self.settings.run.seed)

    @property
    def out_dir(self) -> Path:
        return self.settings.out_path
