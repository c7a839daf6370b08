"""Prompt variants for each meta-reasoning strategy and guidance assembly."""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from ..core.exceptions import CatalogError
from ..core.logging import get_logger
from ..core.models import NON_ZERO_STRATEGIES, Strategy, TaskKind

logger = get_logger(__name__)


class PromptScope(str, Enum):
    """Which tasks a prompt variant may be used for."""

    ANY = "any"
    MATH_QA = "math_qa"
    MULTI_CHOICE = "multi_choice"


class PromptVariant(BaseModel):
    """One prompt realizing a strategy."""

    model_config = ConfigDict(frozen=True)

    strategy: Strategy
    text: str
    scope: PromptScope = PromptScope.ANY

    def matches(self, task: TaskKind) -> bool:
        """Generic tasks only see scope=any; other tasks also see their own scope."""
        return self.scope is PromptScope.ANY or self.scope.value == task.value


_N, _RF, _EX, _DC, _SU, _RC, _AN = NON_ZERO_STRATEGIES

DEFAULT_VARIANTS: Tuple[PromptVariant, ...] = (
    PromptVariant(strategy=_N, text="Next,"),
    PromptVariant(strategy=_N, text="Then,"),
    PromptVariant(strategy=_N, text="Now, let me move on to the next step."),
    PromptVariant(
        strategy=_RF,
        text="Let me consider what part of the reasoning feels least certain, and how can it be examined.",
    ),
    PromptVariant(
        strategy=_RF,
        text="Wait, let me think if there anything missing in the current reasoning.",
    ),
    PromptVariant(strategy=_RF, text="Let me think does the current line of thought have any error."),
    PromptVariant(strategy=_EX, text="Let me consider which direction of thinking I should explore."),
    PromptVariant(
        strategy=_EX,
        text="Let me think what potential strategy has not yet been considered that could be the next solution path.",
    ),
    PromptVariant(strategy=_EX, text="Let me think what possible solution could be tried next."),
    PromptVariant(
        strategy=_DC,
        text="This question is a bit complex, let me think how to decompose it into sub-questions that I can solve.",
    ),
    PromptVariant(
        strategy=_DC,
        text="The question feels too broad, let me think what smaller version could I tackle first.",
    ),
    PromptVariant(
        strategy=_DC,
        text="Let me think if I can express the problem in terms of simpler components or modules.",
    ),
    PromptVariant(
        strategy=_DC,
        text="Let me consider the options one by one.",
        scope=PromptScope.MULTI_CHOICE,
    ),
    PromptVariant(strategy=_SU, text="Let me summarize what have I established so far."),
    PromptVariant(
        strategy=_SU,
        text="Let me summarize the current state of reasoning process, what’s known, unknown, and assumed?",
    ),
    PromptVariant(
        strategy=_SU,
        text="Let me consider if I can captures the essence of the reasoning so far with single sentence.",
    ),
    PromptVariant(
        strategy=_RC,
        text="Let me think if I have encountered similar problems or if learned knowledge and previous intermediate step can be used here.",
    ),
    PromptVariant(
        strategy=_RC,
        text="Let me think what prior reasoning steps are directly relevant here or this question connect to earlier results.",
        scope=PromptScope.MATH_QA,
    ),
    PromptVariant(
        strategy=_RC,
        text="Let me recall which theorems, rules, or principles from earlier knowledge is related to this question.",
        scope=PromptScope.MULTI_CHOICE,
    ),
    PromptVariant(strategy=_AN, text="Let me give the answer according to current reasoning context."),
)


class StrategyCatalog:
    """Immutable set of prompt variants with seeded selection."""

    def __init__(self, variants: Iterable[PromptVariant] = DEFAULT_VARIANTS):
        self._variants: Tuple[PromptVariant, ...] = tuple(variants)
        self._check_invariants()
        self._pools: Dict[Tuple[Strategy, TaskKind], Tuple[PromptVariant, ...]] = {
            (strategy, task): tuple(
                v for v in self._variants if v.strategy is strategy and v.matches(task)
            )
            for strategy in NON_ZERO_STRATEGIES
            for task in TaskKind
        }
        self._by_text: Dict[str, Strategy] = {v.text: v.strategy for v in self._variants}

    def _check_invariants(self) -> None:
        for variant in self._variants:
            if variant.strategy is Strategy.ZERO:
                raise CatalogError("Zero cannot have prompt variants")
            if not variant.text.strip():
                raise CatalogError(f"Empty prompt text for {variant.strategy.value}")
            if "\n" in variant.text or "\r" in variant.text:
                # Guidance puts one prompt per line after the last blank line.
                raise CatalogError(
                    f"Prompt text for {variant.strategy.value} must be a single line",
                    repr(variant.text),
                )
        for strategy in NON_ZERO_STRATEGIES:
            for task in TaskKind:
                if not any(v.strategy is strategy and v.matches(task) for v in self._variants):
                    raise CatalogError(
                        f"No prompt for {strategy.value} usable on {task.value} tasks"
                    )
        answers = [v for v in self._variants if v.strategy is Strategy.ANSWER]
        if len(answers) != 1:
            raise CatalogError(f"Answer must have exactly one prompt, found {len(answers)}")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "StrategyCatalog":
        """Load a catalog override: a JSON array of {strategy, text, scope}."""
        try:
            entries = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CatalogError(f"Catalog file not found: {path}")
        except json.JSONDecodeError as e:
            raise CatalogError(f"Invalid JSON in catalog file {path}", str(e))

        if not isinstance(entries, list):
            raise CatalogError(f"Catalog file {path} must contain a JSON array")

        variants: List[PromptVariant] = []
        for position, entry in enumerate(entries):
            try:
                variants.append(PromptVariant(
                    strategy=Strategy.parse(str(entry["strategy"])),
                    text=entry["text"],
                    scope=PromptScope(entry.get("scope", "any")),
                ))
            except (KeyError, TypeError, ValueError, ValidationError) as e:
                raise CatalogError(f"Invalid catalog entry {position} in {path}", str(e))

        catalog = cls(variants)
        logger.info("Loaded prompt catalog", path=str(path), variants=len(variants))
        return catalog

    def catalog_listing(self) -> List[PromptVariant]:
        """Every variant, in declaration order."""
        return list(self._variants)

    def pool(self, strategy: Strategy, task: TaskKind) -> Tuple[PromptVariant, ...]:
        if strategy is Strategy.ZERO:
            raise CatalogError("Zero has no prompt: it marks an absent edge")
        return self._pools[(strategy, task)]

    def prompt_for(self, strategy: Strategy, task: TaskKind, rng: np.random.Generator) -> str:
        """One variant for ``strategy``, uniformly among those matching ``task``."""
        pool = self.pool(strategy, task)
        if len(pool) == 1:
            return pool[0].text
        return pool[int(rng.integers(len(pool)))].text

    @property
    def answer_prompt(self) -> str:
        return self._pools[(Strategy.ANSWER, TaskKind.GENERIC)][0].text

    def strategy_of(self, text: str) -> Optional[Strategy]:
        """Strategy whose variant is exactly ``text``, if any."""
        return self._by_text.get(text.strip())

    def guidance_text(
        self,
        strategies: Iterable[Strategy],
        predecessor_contents: Sequence[Tuple[int, str]],
        task: TaskKind,
        rng: np.random.Generator,
    ) -> str:
        """Assemble the guidance prompt for one step.

        Layout: predecessor contents in ascending step index, one per block,
        then one sampled variant per distinct strategy in enum order, one
        per line.
        """
        distinct = sorted(set(strategies), key=lambda s: s.ordinal)
        if not distinct:
            raise CatalogError("Guidance needs at least one strategy")
        if Strategy.ZERO in distinct:
            raise CatalogError("Zero cannot guide a step")
        if not predecessor_contents:
            raise CatalogError("Guidance needs at least one predecessor")

        blocks = [
            f"Step {index}: {content}"
            for index, content in sorted(predecessor_contents, key=lambda item: item[0])
        ]
        prompts = [self.prompt_for(strategy, task, rng) for strategy in distinct]
        return "\n\n".join(blocks) + "\n\n" + "\n".join(prompts)


def guidance_prompts(guidance: str) -> List[str]:
    """The prompt lines at the end of a guidance text, in order."""
    _, _, tail = guidance.rpartition("\n\n")
    return [line for line in tail.split("\n") if line.strip()]
