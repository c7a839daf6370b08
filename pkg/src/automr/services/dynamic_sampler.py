"""Node-by-node skeleton sampling interleaved with base reasoning.

A skeleton grows from the source node (the query). For each candidate
node i the policy decides a strategy for every pair (j, i), j from i-1
down to 0. If every decision is Zero the skeleton is complete; otherwise
the backend writes node i under the guidance of the chosen strategies.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import BackendError, PolicyError, SamplerError, SkeletonError
from ..core.logging import get_logger
from ..core.models import NUM_OUTCOMES, Skeleton, SkeletonEdge, StepNode, Strategy, TaskKind
from ..core.types import DecisionDocument, TraceDocument
from .policy_net import (
    PolicyParameters,
    StrategyDistribution,
    batch_log_probs,
    conditioning_weights,
    encode_decision_input,
    forward,
    greedy_choice,
    refresh_conditioning,
    sample_choice,
)
from .reasoning_backend import ReasoningBackend
from .skeleton_graph import skeleton_to_document, validate
from .strategy_catalog import StrategyCatalog

logger = get_logger(__name__)

TERMINATED_ALL_ZERO = "all_zero"
TERMINATED_BUDGET = "budget"
TERMINATED_MAX_NODES = "max_nodes"


class DecisionRecord(BaseModel):
    """One strategy decision for the pair (node_j, node_i)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    node_i: int = Field(..., ge=1)
    node_j: int = Field(..., ge=0)
    features: np.ndarray
    chosen: Strategy
    log_prob: float = Field(..., le=0.0)
    conditioned_on: Tuple[Strategy, ...] = ()
    context_size: int = Field(..., ge=1, description="Nodes whose embeddings were averaged")


class SamplerConfig(BaseModel):
    """Per-episode sampling settings."""

    model_config = ConfigDict(frozen=True)

    budget: int = Field(1024, ge=0, description="Token budget B over node contents")
    max_nodes: int = Field(64, ge=1, description="Safety cap on skeleton size")
    include_termination_in_logprob: bool = True
    answer_max_tokens: int = Field(256, ge=1)
    condition_on_zero: bool = True
    seed: int = 0


class EpisodeTrace(BaseModel):
    """Everything one episode produced."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    skeleton: Skeleton
    decisions: Tuple[DecisionRecord, ...]
    termination_decisions: Tuple[DecisionRecord, ...] = ()
    terminated_by: str
    final_answer: str
    core_log_prob: float
    termination_log_prob: float = 0.0

    @property
    def total_log_prob(self) -> float:
        return self.core_log_prob + self.termination_log_prob

    def scored_decisions(self, include_termination: bool) -> Tuple[DecisionRecord, ...]:
        if include_termination:
            return self.decisions + self.termination_decisions
        return self.decisions


# Picks an outcome index for pair (j, i) given the policy distribution.
ChoiceRule = Callable[[int, int, StrategyDistribution], int]


class _Episode:
    """Mutable state of one episode; discarded once the trace is built."""

    def __init__(
        self,
        query: str,
        params: PolicyParameters,
        backend: ReasoningBackend,
        catalog: StrategyCatalog,
        config: SamplerConfig,
        task: TaskKind,
        rng: np.random.Generator,
        budget: int,
    ):
        self.query = query
        self.params = params
        self.backend = backend
        self.catalog = catalog
        self.config = config
        self.task = task
        self.rng = rng
        self.budget = budget
        self.nodes: List[StepNode] = []
        self.edges: List[SkeletonEdge] = []
        self.decisions: List[DecisionRecord] = []
        self.mlp_calls = 0

    @property
    def contents(self) -> List[str]:
        return [node.content for node in self.nodes]

    @property
    def budget_used(self) -> int:
        return sum(node.token_count for node in self.nodes[1:])

    async def start(self) -> None:
        if self.backend.d_c != self.params.dims.d_c:
            raise PolicyError(
                "backend embedding dimension does not match the policy",
                f"backend d_c={self.backend.d_c}, policy d_c={self.params.dims.d_c}",
            )
        try:
            embedding = await self.backend.embed_only(self.query)
        except BackendError as e:
            raise BackendError(e.message, e.details, node_index=0)
        self._check_embedding(embedding, 0)
        self.nodes.append(StepNode(index=0, content=self.query, token_count=0, embedding=embedding))

    def _check_embedding(self, embedding: np.ndarray, index: int) -> None:
        if np.shape(embedding) != (self.backend.d_c,):
            raise BackendError(
                "embedding dimension mismatch",
                f"expected ({self.backend.d_c},), got {np.shape(embedding)}",
                node_index=index,
            )

    def decide_round(self, i: int, rule: ChoiceRule) -> List[DecisionRecord]:
        """Decisions for every pair (j, i), j = i-1 .. 0."""
        context_embs = [node.embedding for node in self.nodes[:i]]
        chosen: List[Strategy] = []
        records: List[DecisionRecord] = []
        for j in range(i - 1, -1, -1):
            conditioned = tuple(
                s for s in chosen if self.config.condition_on_zero or s is not Strategy.ZERO
            )
            features = encode_decision_input(
                self.nodes[j].embedding, conditioned, context_embs, self.params
            )
            distribution = forward(self.params, features)
            self.mlp_calls += 1
            outcome = rule(j, i, distribution)
            strategy = Strategy.from_index(outcome)
            records.append(DecisionRecord(
                node_i=i,
                node_j=j,
                features=features,
                chosen=strategy,
                log_prob=float(distribution.log_probs[outcome]),
                conditioned_on=conditioned,
                context_size=i,
            ))
            chosen.append(strategy)
        return records

    async def expand(self, i: int, records: Sequence[DecisionRecord], cap: int) -> None:
        """Write node i under the non-zero decisions of its round."""
        cap = min(cap, self.backend.capabilities.max_tokens_supported)
        incoming = sorted(
            (r for r in records if r.chosen is not Strategy.ZERO),
            key=lambda r: r.node_j,
        )
        guidance = self.catalog.guidance_text(
            [r.chosen for r in incoming],
            [(r.node_j, self.nodes[r.node_j].content) for r in incoming],
            self.task,
            self.rng,
        )
        try:
            result = await self.backend.generate_step(self.contents, guidance, cap)
        except BackendError as e:
            raise BackendError(e.message, e.details, node_index=i)
        if result.token_count > cap:
            raise BackendError(
                "backend exceeded its token cap",
                f"cap={cap}, reported={result.token_count}",
                node_index=i,
            )
        self._check_embedding(result.embedding, i)

        self.nodes.append(StepNode(
            index=i,
            content=result.text,
            token_count=result.token_count,
            embedding=result.embedding,
        ))
        self.edges.extend(
            SkeletonEdge(source=r.node_j, target=i, strategy=r.chosen) for r in incoming
        )
        self.decisions.extend(records)

    async def finish(
        self, terminated_by: str, termination: Sequence[DecisionRecord]
    ) -> EpisodeTrace:
        answer = await final_answer(
            self.contents, self.backend, self.catalog, self.config.answer_max_tokens
        )
        skeleton = Skeleton(nodes=tuple(self.nodes), edges=tuple(self.edges), budget=self.budget)
        trace = EpisodeTrace(
            skeleton=skeleton,
            decisions=tuple(self.decisions),
            termination_decisions=tuple(termination),
            terminated_by=terminated_by,
            final_answer=answer,
            core_log_prob=float(sum(r.log_prob for r in self.decisions)),
            termination_log_prob=float(sum(r.log_prob for r in termination)),
        )
        logger.debug(
            "episode_sampled",
            nodes=skeleton.size,
            terminated_by=terminated_by,
            budget_used=skeleton.budget_used,
        )
        return trace


async def sample_skeleton(
    query: str,
    params: PolicyParameters,
    backend: ReasoningBackend,
    config: SamplerConfig,
    rng: np.random.Generator,
    catalog: Optional[StrategyCatalog] = None,
    task: TaskKind = TaskKind.GENERIC,
    greedy: bool = False,
) -> EpisodeTrace:
    """Sample one skeleton for ``query`` and answer it.

    Prompt variants and strategies draw from ``rng`` in a fixed order, so
    the trace is a function of (query, params, backend, config, rng state).
    """
    episode = _Episode(
        query, params, backend, catalog or StrategyCatalog(), config, task, rng, config.budget
    )
    await episode.start()

    def rule(j: int, i: int, distribution: StrategyDistribution) -> int:
        if greedy:
            return greedy_choice(distribution)
        return sample_choice(distribution, rng)

    while True:
        if episode.budget_used >= config.budget:
            return await episode.finish(TERMINATED_BUDGET, ())
        if len(episode.nodes) >= config.max_nodes:
            return await episode.finish(TERMINATED_MAX_NODES, ())

        i = len(episode.nodes)
        records = episode.decide_round(i, rule)
        if all(r.chosen is Strategy.ZERO for r in records):
            return await episode.finish(TERMINATED_ALL_ZERO, records)

        await episode.expand(i, records, config.budget - episode.budget_used)


async def forced_replay(
    structure: Skeleton,
    query: str,
    backend: ReasoningBackend,
    params: PolicyParameters,
    config: Optional[SamplerConfig] = None,
    rng: Optional[np.random.Generator] = None,
    catalog: Optional[StrategyCatalog] = None,
    task: TaskKind = TaskKind.GENERIC,
) -> Tuple[EpisodeTrace, int]:
    """Rebuild ``structure`` for ``query`` with every decision dictated.

    Edges present in the structure force their label, absent pairs force
    Zero, and an all-zero round closes the skeleton. Contents are
    regenerated by the backend. Log-probs are those of ``params`` for the
    forced outcomes. Returns the trace and the number of policy calls.
    """
    report = validate(structure)
    if not report.ok:
        raise SkeletonError("Cannot replay an invalid skeleton", "; ".join(report.messages()))

    config = config or SamplerConfig(budget=structure.budget)
    content_nodes = structure.size - 1
    if structure.budget < content_nodes:
        raise SamplerError(
            f"budget {structure.budget} cannot give each of {content_nodes} nodes a token"
        )

    labels: Dict[Tuple[int, int], Strategy] = structure.edge_labels()

    def rule(j: int, i: int, distribution: StrategyDistribution) -> int:
        return labels.get((j, i), Strategy.ZERO).ordinal

    episode = _Episode(
        query,
        params,
        backend,
        catalog or StrategyCatalog(),
        config,
        task,
        rng if rng is not None else np.random.default_rng(config.seed),
        structure.budget,
    )
    await episode.start()

    for i in range(1, structure.size):
        records = episode.decide_round(i, rule)
        # Leave at least one token for each node still to come.
        cap = structure.budget - episode.budget_used - (content_nodes - i)
        await episode.expand(i, records, cap)

    termination = episode.decide_round(structure.size, rule)
    trace = await episode.finish(TERMINATED_ALL_ZERO, termination)
    return trace, episode.mlp_calls


def decision_rows(
    records: Sequence[DecisionRecord],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked (features, conditioning mixture, chosen index) for ``records``."""
    if not records:
        return np.zeros((0, 0)), np.zeros((0, NUM_OUTCOMES)), np.zeros(0, dtype=np.int64)
    features = np.stack([r.features for r in records])
    mixing = np.stack([conditioning_weights(r.conditioned_on) for r in records])
    chosen = np.array([r.chosen.ordinal for r in records], dtype=np.int64)
    return features, mixing, chosen


def skeleton_log_prob(
    params: PolicyParameters, trace: EpisodeTrace, include_termination: bool
) -> float:
    """log P(skeleton | query) recomputed under ``params``.

    The conditioning block of each stored row is rebuilt from
    ``params``, so traces sampled under older weights score correctly.
    Without termination this is the sum over the decisions for nodes
    1..|V|-1; with it the closing all-zero round is added.
    """
    records = trace.scored_decisions(include_termination)
    if not records:
        return 0.0
    features, mixing, chosen = decision_rows(records)
    features = refresh_conditioning(params, features, mixing)
    return float(np.sum(batch_log_probs(params, features, chosen)))


async def final_answer(
    context: Sequence[str],
    backend: ReasoningBackend,
    catalog: Optional[StrategyCatalog] = None,
    max_tokens: int = 256,
) -> str:
    """Ask the backend for the answer given the full ordered context."""
    if not context:
        raise SamplerError("answer context must contain at least the query")
    prompt = (catalog or StrategyCatalog()).answer_prompt
    try:
        result = await backend.generate_answer(list(context), prompt, max_tokens)
    except BackendError as e:
        raise BackendError(f"final answer: {e.message}", e.details)
    return result.text


def _decision_document(record: DecisionRecord) -> DecisionDocument:
    return {
        "i": record.node_i,
        "j": record.node_j,
        "chosen": record.chosen.value,
        "log_prob": record.log_prob,
    }


def trace_to_document(trace: EpisodeTrace) -> TraceDocument:
    """Skeleton document extended with the episode's decisions and outcome."""
    document = skeleton_to_document(trace.skeleton)
    return {
        **document,
        "decisions": [_decision_document(r) for r in trace.decisions],
        "termination_decisions": [_decision_document(r) for r in trace.termination_decisions],
        "terminated_by": trace.terminated_by,
        "final_answer": trace.final_answer,
    }
