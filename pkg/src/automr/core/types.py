"""Shapes of the JSON documents the engine writes and reads."""

from typing import List

from typing_extensions import TypedDict


class NodeDocument(TypedDict):
    """A step as exported (no embedding)."""

    index: int
    content: str
    token_count: int


# "from" is a keyword, so this one needs the functional form.
EdgeDocument = TypedDict("EdgeDocument", {"from": int, "to": int, "strategy": str})


class SkeletonDocument(TypedDict):
    """Skeleton trace document."""

    nodes: List[NodeDocument]
    edges: List[EdgeDocument]
    budget: int
    budget_used: int


class DecisionDocument(TypedDict):
    """One sampled (or forced) edge decision."""

    i: int
    j: int
    chosen: str
    log_prob: float


class TraceDocument(SkeletonDocument):
    """Skeleton document extended with the episode's decisions and outcome."""

    decisions: List[DecisionDocument]
    termination_decisions: List[DecisionDocument]
    terminated_by: str
    final_answer: str


class CurveRecord(TypedDict):
    """One learning-curve line."""

    iteration: int
    mean_reward: float
    mean_nodes: float
    mean_tokens: float
    grad_norm_pre: float
    grad_norm_post: float


class CatalogEntry(TypedDict):
    """One prompt variant in a catalog override file."""

    strategy: str
    text: str
    scope: str


class DimsDocument(TypedDict):
    d_c: int
    d_s: int
    h: int
    out: int


class CheckpointDocument(TypedDict):
    version: str
    dims: DimsDocument
    strategy_embeddings: List[List[float]]
    W1: List[List[float]]
    b1: List[float]
    W2: List[List[float]]
    b2: List[float]
