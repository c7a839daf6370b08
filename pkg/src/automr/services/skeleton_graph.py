"""Skeleton construction, validation and export."""

import heapq
from collections import Counter
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import graphviz
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import SkeletonError
from ..core.models import Skeleton, SkeletonEdge, StepNode, Strategy
from ..core.types import EdgeDocument, NodeDocument, SkeletonDocument

DEFAULT_BUDGET = 1024
DOT_LABEL_WIDTH = 40


class Violation(BaseModel):
    """One broken skeleton invariant."""

    model_config = ConfigDict(frozen=True)

    kind: str
    message: str
    node: Optional[int] = None
    edge: Optional[Tuple[int, int]] = None


class ValidationReport(BaseModel):
    """Result of ``validate``: ok iff there are no violations."""

    violations: List[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> List[str]:
        return [v.message for v in self.violations]


def validate(skeleton: Skeleton) -> ValidationReport:
    """Report every violated skeleton invariant. Never raises."""
    violations: List[Violation] = []
    size = skeleton.size

    if size == 0:
        violations.append(Violation(kind="empty", message="skeleton has no source node"))
        return ValidationReport(violations=violations)

    for position, node in enumerate(skeleton.nodes):
        if node.index != position:
            violations.append(Violation(
                kind="index_gap",
                message=f"node index gap at position {position} (found {node.index})",
                node=position,
            ))

    in_degree: Counter = Counter()
    seen: Counter = Counter((edge.source, edge.target) for edge in skeleton.edges)
    for edge in skeleton.edges:
        pair = (edge.source, edge.target)
        if edge.source >= size or edge.target >= size:
            violations.append(Violation(
                kind="dangling_edge",
                message=f"edge {pair} references a missing node",
                edge=pair,
            ))
            continue
        if edge.source >= edge.target:
            violations.append(Violation(
                kind="forward_order",
                message=f"forward-edge order at ({edge.source},{edge.target})",
                edge=pair,
            ))
            continue
        if edge.strategy is Strategy.ZERO:
            violations.append(Violation(
                kind="zero_edge",
                message=f"zero strategy stored on edge ({edge.source},{edge.target})",
                edge=pair,
            ))
        in_degree[edge.target] += 1

    for pair, count in sorted(seen.items()):
        if count > 1:
            violations.append(Violation(
                kind="multi_edge",
                message=f"{count} edges share pair ({pair[0]},{pair[1]})",
                edge=pair,
            ))

    for index in range(1, size):
        if in_degree[index] == 0:
            violations.append(Violation(
                kind="unreachable",
                message=f"unreachable node {index}",
                node=index,
            ))

    if skeleton.budget_used > skeleton.budget:
        violations.append(Violation(
            kind="budget",
            message=f"budget exceeded: {skeleton.budget_used} > {skeleton.budget}",
        ))

    return ValidationReport(violations=violations)


def _placeholder_nodes(count: int) -> Tuple[StepNode, ...]:
    return tuple(StepNode(index=i, content="", token_count=0) for i in range(count))


def _require_label(strategy: Strategy) -> None:
    if strategy is Strategy.ZERO:
        raise SkeletonError("Zero cannot label a stored edge")


def build_sequential(k: int, strategy: Strategy, budget: int = DEFAULT_BUDGET) -> Skeleton:
    """Chain of ``k`` steps after the source: edges (i, i+1)."""
    if k < 1:
        raise SkeletonError(f"sequential skeleton needs at least one step, got {k}")
    _require_label(strategy)

    edges = tuple(SkeletonEdge(source=i, target=i + 1, strategy=strategy) for i in range(k))
    return Skeleton(nodes=_placeholder_nodes(k + 1), edges=edges, budget=budget)


def build_parallel(
    branch_lengths: Sequence[int],
    strategy: Strategy,
    budget: int = DEFAULT_BUDGET,
) -> Skeleton:
    """Source fans out to one chain per branch; branches are numbered in order."""
    if not branch_lengths:
        raise SkeletonError("parallel skeleton needs at least one branch")
    if any(length < 1 for length in branch_lengths):
        raise SkeletonError(f"branch lengths must be positive: {list(branch_lengths)}")
    _require_label(strategy)

    edges: List[SkeletonEdge] = []
    next_index = 1
    for length in branch_lengths:
        previous = 0
        for _ in range(length):
            edges.append(SkeletonEdge(source=previous, target=next_index, strategy=strategy))
            previous = next_index
            next_index += 1

    return Skeleton(nodes=_placeholder_nodes(next_index), edges=tuple(edges), budget=budget)


def build_tree(
    parent_of: Sequence[Any],
    strategies: Union[Strategy, Sequence[Optional[Strategy]]],
    budget: int = DEFAULT_BUDGET,
) -> Skeleton:
    """Rooted tree from a parent list (``parent_of[0]`` is None for the root).

    Nodes are renumbered into topological order when a parent has a larger
    index than its child; a list already in that order keeps its numbering.
    """
    count = len(parent_of)
    if count < 2:
        raise SkeletonError("tree needs a root and at least one child")
    if parent_of[0] is not None:
        raise SkeletonError("node 0 must be the root (parent None)")

    if isinstance(strategies, Strategy):
        labels: List[Optional[Strategy]] = [None] + [strategies] * (count - 1)
    else:
        labels = list(strategies)
        if len(labels) == count - 1:
            labels = [None] + labels
        if len(labels) != count:
            raise SkeletonError(
                f"expected {count - 1} edge labels, got {len(strategies)}"
            )

    parents: List[int] = []
    for child in range(1, count):
        parent = parent_of[child]
        if isinstance(parent, (list, tuple, set)):
            if len(parent) != 1:
                raise SkeletonError(f"node {child} has {len(parent)} parents")
            parent = next(iter(parent))
        if not isinstance(parent, int) or not 0 <= parent < count or parent == child:
            raise SkeletonError(f"node {child} has invalid parent {parent!r}")
        label = labels[child]
        if label is None:
            raise SkeletonError(f"missing label for edge into node {child}")
        _require_label(label)
        parents.append(parent)

    children: Dict[int, List[int]] = {}
    for child in range(1, count):
        children.setdefault(parents[child - 1], []).append(child)

    # Smallest ready index first, so topologically numbered input is unchanged.
    order: List[int] = []
    ready = [0]
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for child in children.get(node, []):
            heapq.heappush(ready, child)
    if len(order) != count:
        stuck = sorted(set(range(count)) - set(order))
        raise SkeletonError(f"parent list contains a cycle among nodes {stuck}")

    new_index = {old: new for new, old in enumerate(order)}
    edges = sorted(
        (
            SkeletonEdge(
                source=new_index[parents[old - 1]],
                target=new_index[old],
                strategy=labels[old],
            )
            for old in range(1, count)
        ),
        key=lambda edge: (edge.target, edge.source),
    )
    return Skeleton(nodes=_placeholder_nodes(count), edges=tuple(edges), budget=budget)


def _require_valid(skeleton: Skeleton, operation: str) -> None:
    report = validate(skeleton)
    if not report.ok:
        raise SkeletonError(
            f"Cannot {operation} an invalid skeleton",
            "; ".join(report.messages()),
        )


def _dot_label(node: StepNode) -> str:
    text = " ".join(node.content.split())
    if not text:
        return str(node.index)
    if len(text) > DOT_LABEL_WIDTH:
        text = text[: DOT_LABEL_WIDTH - 3] + "..."
    return f"{node.index}: {text}"


def export_dot(skeleton: Skeleton) -> str:
    """Render the skeleton as DOT source, ordered by node then edge index."""
    _require_valid(skeleton, "export")

    dot = graphviz.Digraph("skeleton")
    dot.attr(rankdir="TB")
    dot.attr("node", shape="box", fontname="Helvetica")
    dot.attr("edge", fontname="Helvetica", fontsize="10")

    for node in skeleton.nodes:
        dot.node(f"n{node.index}", _dot_label(node))
    for edge in sorted(skeleton.edges, key=lambda e: (e.target, e.source)):
        dot.edge(f"n{edge.source}", f"n{edge.target}", label=edge.strategy.value)

    return dot.source


def skeleton_to_document(skeleton: Skeleton) -> SkeletonDocument:
    """Trace document fields for a skeleton (embeddings are not exported)."""
    nodes: List[NodeDocument] = [
        {"index": node.index, "content": node.content, "token_count": node.token_count}
        for node in skeleton.nodes
    ]
    edges: List[EdgeDocument] = [
        {"from": edge.source, "to": edge.target, "strategy": edge.strategy.value}
        for edge in sorted(skeleton.edges, key=lambda e: (e.target, e.source))
    ]
    return {
        "nodes": nodes,
        "edges": edges,
        "budget": skeleton.budget,
        "budget_used": skeleton.budget_used,
    }


def skeleton_from_document(document: Dict[str, Any]) -> Skeleton:
    """Rebuild a skeleton (without embeddings) from a trace or skeleton document."""
    try:
        nodes = tuple(
            StepNode(
                index=int(node["index"]),
                content=str(node.get("content", "")),
                token_count=int(node.get("token_count", 0)),
            )
            for node in document["nodes"]
        )
        edges = tuple(
            SkeletonEdge(
                source=int(edge["from"]),
                target=int(edge["to"]),
                strategy=Strategy.parse(str(edge["strategy"])),
            )
            for edge in document.get("edges", [])
        )
        budget = int(document.get("budget", DEFAULT_BUDGET))
    except (KeyError, TypeError, ValueError) as e:
        raise SkeletonError("Malformed skeleton document", str(e))
    return Skeleton(nodes=nodes, edges=edges, budget=budget)
