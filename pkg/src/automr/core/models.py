"""Core domain models for meta-reasoning skeletons."""

from enum import Enum
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class Strategy(str, Enum):
    """Edge label: a meta-reasoning strategy, or Zero for "no edge".

    Declaration order is the enum order used for policy outputs and for
    prompt assembly.
    """

    NEXT = "Next"
    REFLECT = "Reflect"
    EXPLORE = "Explore"
    DECOMPOSE = "Decompose"
    SUMMARIZE = "Summarize"
    RECALL = "Recall"
    ANSWER = "Answer"
    ZERO = "Zero"

    @property
    def ordinal(self) -> int:
        return _STRATEGY_INDEX[self]

    @classmethod
    def from_index(cls, index: int) -> "Strategy":
        return ALL_STRATEGIES[index]

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        """Look a strategy up by its name, case-insensitively."""
        for strategy in cls:
            if strategy.value.lower() == name.strip().lower():
                return strategy
        raise ValueError(f"Unknown strategy: {name!r}")


ALL_STRATEGIES: Tuple[Strategy, ...] = tuple(Strategy)
NON_ZERO_STRATEGIES: Tuple[Strategy, ...] = tuple(s for s in Strategy if s is not Strategy.ZERO)
_STRATEGY_INDEX: Dict[Strategy, int] = {s: i for i, s in enumerate(ALL_STRATEGIES)}
NUM_OUTCOMES = len(ALL_STRATEGIES)


class TaskKind(str, Enum):
    """Kind of task a query belongs to; selects task-scoped prompt variants."""

    MATH_QA = "math_qa"
    MULTI_CHOICE = "multi_choice"
    GENERIC = "generic"


class StepNode(BaseModel):
    """One reasoning step. Node 0 holds the query."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    index: int = Field(..., ge=0, description="Topological index")
    content: str = Field("", description="Step text")
    token_count: int = Field(0, ge=0, description="Backend-reported token count")
    embedding: Optional[np.ndarray] = Field(None, description="Content embedding e(c)")


class SkeletonEdge(BaseModel):
    """A forward edge carrying the strategy that guided the target step."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    source: int = Field(..., ge=0, alias="from")
    target: int = Field(..., ge=0, alias="to")
    strategy: Strategy

    @property
    def key(self) -> Tuple[int, int, Strategy]:
        return (self.source, self.target, self.strategy)


class Skeleton(BaseModel):
    """Single-source edge-heterogeneous DAG of reasoning steps.

    Construction does not validate; use ``skeleton_graph.validate`` for a
    report of violated invariants.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    nodes: Tuple[StepNode, ...]
    edges: Tuple[SkeletonEdge, ...] = ()
    budget: int = Field(1024, ge=0, description="Token budget B")

    @property
    def budget_used(self) -> int:
        return sum(node.token_count for node in self.nodes[1:])

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def query(self) -> str:
        return self.nodes[0].content if self.nodes else ""

    def edge_labels(self) -> Dict[Tuple[int, int], Strategy]:
        """Map (from, to) pairs to their strategy; later duplicates win."""
        return {(edge.source, edge.target): edge.strategy for edge in self.edges}

    def structure(self) -> Tuple[int, FrozenSet[Tuple[int, int, Strategy]]]:
        """Node count plus labeled edge set; contents are ignored."""
        return (self.size, frozenset(edge.key for edge in self.edges))


class GenerationResult(BaseModel):
    """One backend generation."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    text: str
    token_count: int = Field(..., ge=0)
    embedding: np.ndarray

    @field_validator("embedding", mode="before")
    @classmethod
    def as_float64(cls, v: object) -> np.ndarray:
        """Embeddings cross into the policy as float64 vectors."""
        array = np.asarray(v, dtype=np.float64)
        if array.ndim != 1 or not np.all(np.isfinite(array)):
            raise ValueError("embedding must be a finite 1-d vector")
        return array


class BackendCapabilities(BaseModel):
    """What a backend can do."""

    model_config = ConfigDict(frozen=True)

    d_c: int = Field(..., gt=0, description="Content-embedding dimension")
    max_tokens_supported: int = Field(4096, gt=0)
    deterministic: bool = False


class DatasetRecord(BaseModel):
    """A query with its gold answer."""

    model_config = ConfigDict(frozen=True)

    query: str = Field(..., min_length=1)
    answer: str = Field(..., min_length=1)
    task: TaskKind = TaskKind.GENERIC
