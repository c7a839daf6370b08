"""REINFORCE search over skeleton policies, plus the random-search baseline."""

import asyncio
import re
import string
from abc import ABC, abstractmethod
from typing import Awaitable, Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import AutoMRError, ConfigurationError, SearchError
from ..core.logging import get_logger
from ..core.models import DatasetRecord, Skeleton, Strategy
from ..core.types import CurveRecord
from ..utils.seeding import Stream, child_seeds, stream_rng
from .dynamic_sampler import EpisodeTrace, SamplerConfig, decision_rows, forced_replay, sample_skeleton
from .optimizer import PolicyOptimizer, make_optimizer
from .policy_net import PolicyDims, PolicyParameters, batch_logprob_and_grad, zero_params
from .reasoning_backend import ReasoningBackend
from .strategy_catalog import StrategyCatalog

logger = get_logger(__name__)

T = TypeVar("T")

# Maps (gold, predicted) to a reward.
RewardFn = Callable[[str, str], float]


class AnswerMatcher(ABC):
    """Decides whether a predicted answer matches the gold one."""

    @abstractmethod
    def normalize(self, text: str) -> str:
        """Canonical form compared for equality."""

    def matches(self, gold: str, predicted: str) -> bool:
        return self.normalize(gold) == self.normalize(predicted)


class NormalizedMatcher(AnswerMatcher):
    """Trim whitespace, strip trailing punctuation, case-fold."""

    def normalize(self, text: str) -> str:
        return text.strip().rstrip(string.punctuation).strip().casefold()


_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")
_ANSWER_IS = re.compile(r"answer is\s*:?\s*(.+)", re.IGNORECASE)


class RegexMatcher(NormalizedMatcher):
    """Extract the final answer from free text before normalizing.

    Prefers the last ``\\boxed{...}``, then whatever follows the last
    "answer is", then the last non-empty line.
    """

    def extract(self, text: str) -> str:
        boxed = _BOXED.findall(text)
        if boxed:
            return boxed[-1]
        stated = _ANSWER_IS.findall(text)
        if stated:
            return stated[-1].splitlines()[0]
        lines = [line for line in text.splitlines() if line.strip()]
        return lines[-1] if lines else ""

    def normalize(self, text: str) -> str:
        return super().normalize(self.extract(text))


def make_matcher(name: str) -> AnswerMatcher:
    if name == "normalized":
        return NormalizedMatcher()
    if name == "regex":
        return RegexMatcher()
    raise ConfigurationError(f"Unknown matcher: {name}", "expected 'normalized' or 'regex'")


def reward(gold: str, predicted: str, matcher: Optional[AnswerMatcher] = None) -> int:
    """+1 for an exact match under ``matcher``, -1 otherwise."""
    return 1 if (matcher or NormalizedMatcher()).matches(gold, predicted) else -1


class SearchConfig(BaseModel):
    """Outer-loop settings."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    N: int = Field(8, ge=1, description="Queries per batch")
    M: int = Field(16, ge=1, description="Skeletons per query")
    eta: float = Field(5e-4, gt=0)
    clip_norm: float = Field(1.0, gt=0)
    iterations: int = Field(300, ge=0)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    seed: int = 0
    optimizer: str = "adam"
    reward_baseline: float = 0.0
    concurrency: int = Field(16, ge=1)
    eval_greedy: bool = False
    checkpoint_every: int = Field(50, ge=1)


class RewardRecord(BaseModel):
    """Outcome of one episode in a batch."""

    model_config = ConfigDict(frozen=True)

    query_index: int
    episode_index: int
    reward: float
    core_log_prob: float
    total_log_prob: float


class BatchStats(BaseModel):
    """Summary of one ``batch_update``."""

    model_config = ConfigDict(frozen=True)

    rewards: Tuple[RewardRecord, ...]
    mean_reward: float
    mean_nodes: float
    mean_tokens: float
    grad_norm_pre: float
    grad_norm_post: float


class LearningCurve(BaseModel):
    """Per-iteration statistics of a training run."""

    records: List[CurveRecord] = Field(default_factory=list)

    def append(self, iteration: int, stats: BatchStats) -> CurveRecord:
        record: CurveRecord = {
            "iteration": iteration,
            "mean_reward": stats.mean_reward,
            "mean_nodes": stats.mean_nodes,
            "mean_tokens": stats.mean_tokens,
            "grad_norm_pre": stats.grad_norm_pre,
            "grad_norm_post": stats.grad_norm_post,
        }
        self.records.append(record)
        return record

    def __len__(self) -> int:
        return len(self.records)

    @property
    def mean_rewards(self) -> np.ndarray:
        return np.array([r["mean_reward"] for r in self.records])

    def moving_average(self, window: int = 20) -> np.ndarray:
        """Trailing mean of the reward over ``window`` iterations."""
        rewards = self.mean_rewards
        if len(rewards) < window:
            return np.array([rewards.mean()]) if len(rewards) else rewards
        return np.convolve(rewards, np.ones(window) / window, mode="valid")


class CheckpointSink(ABC):
    """Where ``train`` writes checkpoints and learning-curve records."""

    @abstractmethod
    def save(self, iteration: int, params: PolicyParameters) -> None:
        """Write the checkpoint taken after ``iteration`` updates."""

    @abstractmethod
    def save_final(self, params: PolicyParameters) -> None:
        """Write the final checkpoint."""

    def record(self, record: CurveRecord) -> None:
        """Append one learning-curve record."""


def clip_gradient(grad: PolicyParameters, clip_norm: float) -> Tuple[PolicyParameters, float, float]:
    """Rescale ``grad`` to global L2 norm at most ``clip_norm``.

    Returns the clipped gradient and the norms before and after.
    """
    norm = grad.global_norm()
    if norm <= clip_norm:
        return grad, norm, norm
    clipped = grad.scale(clip_norm / norm)
    return clipped, norm, clipped.global_norm()


async def _gather_in_order(
    jobs: Sequence[Callable[[], Awaitable[T]]], limit: int, describe: Callable[[int], str]
) -> List[T]:
    """Run ``jobs`` with at most ``limit`` in flight; results keep job order.

    The first failure in job order aborts the whole set as a ``SearchError``.
    """
    semaphore = asyncio.Semaphore(limit)

    async def run(job: Callable[[], Awaitable[T]]) -> T:
        async with semaphore:
            return await job()

    results = await asyncio.gather(*(run(job) for job in jobs), return_exceptions=True)
    for position, result in enumerate(results):
        if isinstance(result, AutoMRError):
            raise SearchError(f"{describe(position)} failed: {result.message}", result.details)
        if isinstance(result, BaseException):
            raise result
    return list(results)  # type: ignore[arg-type]


def _default_reward_fn(matcher: Optional[AnswerMatcher]) -> RewardFn:
    chosen = matcher or NormalizedMatcher()
    return lambda gold, predicted: float(reward(gold, predicted, chosen))


async def batch_update(
    params: PolicyParameters,
    batch: Sequence[DatasetRecord],
    backend: ReasoningBackend,
    config: SearchConfig,
    rng: np.random.Generator,
    optimizer: Optional[PolicyOptimizer] = None,
    catalog: Optional[StrategyCatalog] = None,
    matcher: Optional[AnswerMatcher] = None,
    reward_fn: Optional[RewardFn] = None,
) -> Tuple[PolicyParameters, BatchStats]:
    """One policy-gradient step from N·M sampled episodes.

    g = 1/(M·N) Σ_i Σ_j (r_ij - b) ∇θ log P(α_ij | q_i), clipped to
    ``clip_norm`` and applied by ``optimizer`` (ascent).
    """
    if len(batch) != config.N:
        raise SearchError(f"batch has {len(batch)} queries, expected N={config.N}")

    catalog = catalog or StrategyCatalog()
    optimizer = optimizer or make_optimizer(config.optimizer, config.eta)
    score = reward_fn or _default_reward_fn(matcher)
    seeds = child_seeds(rng, config.N * config.M)
    slots = [(qi, ei) for qi in range(config.N) for ei in range(config.M)]

    def episode(slot: int) -> Callable[[], Awaitable[EpisodeTrace]]:
        qi, _ = slots[slot]
        record = batch[qi]
        return lambda: sample_skeleton(
            record.query,
            params,
            backend,
            config.sampler,
            np.random.default_rng(seeds[slot]),
            catalog=catalog,
            task=record.task,
        )

    traces = await _gather_in_order(
        [episode(slot) for slot in range(len(slots))],
        config.concurrency,
        lambda position: f"episode {slots[position][1]} of query {slots[position][0]}",
    )

    include_termination = config.sampler.include_termination_in_logprob
    rewards: List[RewardRecord] = []
    features, mixing, chosen, weights = [], [], [], []
    scale = 1.0 / (config.M * config.N)
    for (qi, ei), trace in zip(slots, traces):
        r = score(batch[qi].answer, trace.final_answer)
        rewards.append(RewardRecord(
            query_index=qi,
            episode_index=ei,
            reward=r,
            core_log_prob=trace.core_log_prob,
            total_log_prob=trace.total_log_prob,
        ))
        records = trace.scored_decisions(include_termination)
        if not records:
            continue
        f, m, c = decision_rows(records)
        features.append(f)
        mixing.append(m)
        chosen.append(c)
        weights.append(np.full(len(records), (r - config.reward_baseline) * scale))

    if features:
        _, grad = batch_logprob_and_grad(
            params,
            np.concatenate(features),
            np.concatenate(mixing),
            np.concatenate(chosen),
            np.concatenate(weights),
        )
    else:
        grad = params.zeros_like()

    clipped, norm_pre, norm_post = clip_gradient(grad, config.clip_norm)
    new_params = params if norm_pre == 0.0 else optimizer.step(params, clipped)
    if not new_params.is_finite():
        raise SearchError("update produced non-finite parameters", f"grad norm {norm_pre}")

    stats = BatchStats(
        rewards=tuple(rewards),
        mean_reward=float(np.mean([r.reward for r in rewards])),
        mean_nodes=float(np.mean([t.skeleton.size for t in traces])),
        mean_tokens=float(np.mean([t.skeleton.budget_used for t in traces])),
        grad_norm_pre=norm_pre,
        grad_norm_post=norm_post,
    )
    return new_params, stats


async def train(
    dataset: Sequence[DatasetRecord],
    config: SearchConfig,
    backend: ReasoningBackend,
    params: PolicyParameters,
    sink: Optional[CheckpointSink] = None,
    catalog: Optional[StrategyCatalog] = None,
    matcher: Optional[AnswerMatcher] = None,
) -> Tuple[PolicyParameters, LearningCurve]:
    """Run ``config.iterations`` batch updates starting from ``params``.

    Batches are drawn uniformly with replacement. Every randomness source
    derives from ``config.seed``.
    """
    if not dataset:
        raise SearchError("training dataset is empty")

    catalog = catalog or StrategyCatalog()
    optimizer = make_optimizer(config.optimizer, config.eta)
    batch_rng = stream_rng(config.seed, Stream.BATCH)
    curve = LearningCurve()

    for iteration in range(1, config.iterations + 1):
        indices = batch_rng.integers(len(dataset), size=config.N)
        batch = [dataset[int(k)] for k in indices]
        params, stats = await batch_update(
            params,
            batch,
            backend,
            config,
            stream_rng(config.seed, Stream.EPISODE, iteration),
            optimizer=optimizer,
            catalog=catalog,
            matcher=matcher,
        )
        record = curve.append(iteration, stats)
        logger.info("batch_update", **record)

        if sink is not None:
            try:
                sink.record(record)
                if iteration % config.checkpoint_every == 0:
                    sink.save(iteration, params)
            except (OSError, AutoMRError) as e:
                raise SearchError(f"checkpoint write failed at iteration {iteration}", str(e))

    if sink is not None:
        try:
            sink.save_final(params)
        except (OSError, AutoMRError) as e:
            raise SearchError(
                f"checkpoint write failed at iteration {config.iterations}", str(e)
            )
    return params, curve


class EvaluationResult(BaseModel):
    """Accuracy of one episode per query, with the traces."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    accuracy: float = Field(..., ge=0.0, le=1.0)
    correct: int
    total: int
    traces: Tuple[EpisodeTrace, ...]
    rewards: Tuple[int, ...]


async def evaluate(
    dataset: Sequence[DatasetRecord],
    params: PolicyParameters,
    backend: ReasoningBackend,
    config: SearchConfig,
    catalog: Optional[StrategyCatalog] = None,
    matcher: Optional[AnswerMatcher] = None,
) -> EvaluationResult:
    """One episode per query, greedy or sampled per ``config.eval_greedy``."""
    catalog = catalog or StrategyCatalog()

    def episode(index: int) -> Callable[[], Awaitable[EpisodeTrace]]:
        record = dataset[index]
        return lambda: sample_skeleton(
            record.query,
            params,
            backend,
            config.sampler,
            stream_rng(config.seed, Stream.EVAL, index),
            catalog=catalog,
            task=record.task,
            greedy=config.eval_greedy,
        )

    traces = await _gather_in_order(
        [episode(i) for i in range(len(dataset))],
        config.concurrency,
        lambda position: f"evaluation of query {position}",
    )
    rewards = tuple(
        reward(record.answer, trace.final_answer, matcher)
        for record, trace in zip(dataset, traces)
    )
    correct = sum(1 for r in rewards if r > 0)
    total = len(dataset)
    return EvaluationResult(
        accuracy=correct / total if total else 0.0,
        correct=correct,
        total=total,
        traces=tuple(traces),
        rewards=rewards,
    )


class CandidateScore(BaseModel):
    """Training-set score of one random-search candidate."""

    model_config = ConfigDict(frozen=True)

    index: int
    mean_reward: float
    accuracy: float
    size: int
    first_edge: Optional[Strategy] = None


class RandomSearchResult(BaseModel):
    """Best structure found by random search."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    structure: Skeleton
    best_index: int
    accuracy: float
    mean_reward: float
    candidates: Tuple[CandidateScore, ...]


def first_edge_label(structure: Skeleton) -> Optional[Strategy]:
    """Label of edge (0, 1), if the structure has one."""
    return structure.edge_labels().get((0, 1))


async def random_search_baseline(
    dataset: Sequence[DatasetRecord],
    backend: ReasoningBackend,
    n_candidates: int = 48,
    config: Optional[SearchConfig] = None,
    rng: Optional[np.random.Generator] = None,
    catalog: Optional[StrategyCatalog] = None,
    matcher: Optional[AnswerMatcher] = None,
    dims: Optional[PolicyDims] = None,
) -> RandomSearchResult:
    """Sample structures under the uniform policy and keep the best one.

    Each candidate is applied to every query by forced replay, so contents
    are regenerated per query. Ties go to the lowest candidate index.
    """
    if n_candidates < 1:
        raise SearchError(f"n_candidates must be at least 1, got {n_candidates}")
    if not dataset:
        raise SearchError("random search needs a nonempty dataset")

    config = config or SearchConfig()
    catalog = catalog or StrategyCatalog()
    rng = rng if rng is not None else stream_rng(config.seed, Stream.CANDIDATE)
    uniform = zero_params(dims or PolicyDims(d_c=backend.d_c))

    best: Optional[Tuple[int, Skeleton, float, float]] = None
    scores: List[CandidateScore] = []
    for index in range(n_candidates):
        seed, source_pick = child_seeds(rng, 2)
        source = dataset[source_pick % len(dataset)]
        try:
            candidate = await sample_skeleton(
                source.query,
                uniform,
                backend,
                config.sampler,
                np.random.default_rng(seed),
                catalog=catalog,
                task=source.task,
            )
        except AutoMRError as e:
            raise SearchError(f"sampling candidate {index} failed: {e.message}", e.details)
        structure = candidate.skeleton

        def replay(position: int) -> Callable[[], Awaitable[EpisodeTrace]]:
            record = dataset[position]

            async def job() -> EpisodeTrace:
                trace, _ = await forced_replay(
                    structure,
                    record.query,
                    backend,
                    uniform,
                    config=config.sampler,
                    rng=stream_rng(config.seed, Stream.CANDIDATE, index, position),
                    catalog=catalog,
                    task=record.task,
                )
                return trace

            return job

        traces = await _gather_in_order(
            [replay(p) for p in range(len(dataset))],
            config.concurrency,
            lambda position: f"candidate {index} on query {position}",
        )
        rewards = [
            reward(record.answer, trace.final_answer, matcher)
            for record, trace in zip(dataset, traces)
        ]
        mean_reward = float(np.mean(rewards))
        accuracy = sum(1 for r in rewards if r > 0) / len(rewards)
        scores.append(CandidateScore(
            index=index,
            mean_reward=mean_reward,
            accuracy=accuracy,
            size=structure.size,
            first_edge=first_edge_label(structure),
        ))
        logger.info(
            "rs_candidate_scored",
            candidate=index,
            nodes=structure.size,
            mean_reward=mean_reward,
        )
        if best is None or mean_reward > best[2]:
            best = (index, structure, mean_reward, accuracy)

    assert best is not None
    best_index, structure, mean_reward, accuracy = best
    return RandomSearchResult(
        structure=structure,
        best_index=best_index,
        accuracy=accuracy,
        mean_reward=mean_reward,
        candidates=tuple(scores),
    )
