"""Tests for the prompt catalog and guidance assembly."""

import json
from collections import Counter

import numpy as np
import pytest

from automr.core.exceptions import CatalogError
from automr.core.models import NON_ZERO_STRATEGIES, Strategy, TaskKind
from automr.services.strategy_catalog import (
    DEFAULT_VARIANTS,
    PromptScope,
    PromptVariant,
    StrategyCatalog,
    guidance_prompts,
)

ANSWER_TEXT = "Let me give the answer according to current reasoning context."
NEXT_TEXTS = {"Next,", "Then,", "Now, let me move on to the next step."}


class TestListing:
    def test_counts_per_strategy(self, catalog):
        counts = Counter(v.strategy for v in catalog.catalog_listing())
        assert counts == {
            Strategy.NEXT: 3,
            Strategy.REFLECT: 3,
            Strategy.EXPLORE: 3,
            Strategy.DECOMPOSE: 4,
            Strategy.SUMMARIZE: 3,
            Strategy.RECALL: 3,
            Strategy.ANSWER: 1,
        }
        assert len(catalog.catalog_listing()) == 20

    def test_scoped_variants(self, catalog):
        multi = [v.text for v in catalog.catalog_listing() if v.scope is PromptScope.MULTI_CHOICE]
        math = [v.text for v in catalog.catalog_listing() if v.scope is PromptScope.MATH_QA]
        assert any("options one by one" in t for t in multi)
        assert any("theorems, rules, or principles" in t for t in multi)
        assert any("prior reasoning steps are directly relevant" in t for t in math)


class TestPromptFor:
    def test_answer_is_single_variant(self, catalog):
        for task in TaskKind:
            for seed in range(5):
                assert catalog.prompt_for(Strategy.ANSWER, task, np.random.default_rng(seed)) == ANSWER_TEXT
        assert catalog.answer_prompt == ANSWER_TEXT

    def test_next_variants(self, catalog):
        drawn = {catalog.prompt_for(Strategy.NEXT, TaskKind.MATH_QA, np.random.default_rng(s)) for s in range(50)}
        assert drawn == NEXT_TEXTS

    def test_decompose_multi_choice_pool(self, catalog):
        pool = [v.text for v in catalog.pool(Strategy.DECOMPOSE, TaskKind.MULTI_CHOICE)]
        assert "Let me consider the options one by one." in pool
        generic = [v.text for v in catalog.pool(Strategy.DECOMPOSE, TaskKind.GENERIC)]
        assert "Let me consider the options one by one." not in generic

    def test_generic_sees_only_any_scope(self, catalog):
        for strategy in NON_ZERO_STRATEGIES:
            assert all(v.scope is PromptScope.ANY for v in catalog.pool(strategy, TaskKind.GENERIC))

    def test_zero_rejected(self, catalog, rng):
        with pytest.raises(CatalogError):
            catalog.prompt_for(Strategy.ZERO, TaskKind.GENERIC, rng)

    def test_output_is_listed_text(self, catalog):
        texts = {v.text for v in catalog.catalog_listing()}
        rng = np.random.default_rng(7)
        for _ in range(200):
            strategy = NON_ZERO_STRATEGIES[int(rng.integers(len(NON_ZERO_STRATEGIES)))]
            task = list(TaskKind)[int(rng.integers(3))]
            assert catalog.prompt_for(strategy, task, rng) in texts

    def test_uniform_selection(self, catalog):
        rng = np.random.default_rng(0)
        counts = Counter(catalog.prompt_for(Strategy.NEXT, TaskKind.GENERIC, rng) for _ in range(10_000))
        for text in NEXT_TEXTS:
            assert abs(counts[text] / 10_000 - 1 / 3) < 0.05


class TestGuidance:
    def test_single_strategy(self, catalog, rng):
        text = catalog.guidance_text([Strategy.NEXT], [(0, "c0")], TaskKind.MATH_QA, rng)
        assert text.startswith("Step 0: c0")
        assert guidance_prompts(text)[0] in NEXT_TEXTS

    def test_each_strategy_once(self, catalog, rng):
        text = catalog.guidance_text(
            [Strategy.RECALL, Strategy.REFLECT], [(0, "query"), (1, "first step")], TaskKind.GENERIC, rng
        )
        prompts = guidance_prompts(text)
        assert [catalog.strategy_of(p) for p in prompts] == [Strategy.REFLECT, Strategy.RECALL]

    def test_duplicates_collapse(self, catalog, rng):
        text = catalog.guidance_text([Strategy.NEXT, Strategy.NEXT], [(0, "a"), (1, "b")], TaskKind.GENERIC, rng)
        assert len(guidance_prompts(text)) == 1

    def test_contents_in_index_order(self, catalog, rng):
        text = catalog.guidance_text([Strategy.NEXT], [(2, "later"), (0, "earlier")], TaskKind.GENERIC, rng)
        assert text.index("Step 0: earlier") < text.index("Step 2: later")

    def test_deterministic(self, catalog):
        args = ([Strategy.EXPLORE, Strategy.SUMMARIZE], [(0, "q"), (3, "x")], TaskKind.GENERIC)
        first = catalog.guidance_text(*args, np.random.default_rng(11))
        second = catalog.guidance_text(*args, np.random.default_rng(11))
        assert first == second

    def test_contains_contents_verbatim(self, catalog, rng):
        contents = [(0, "What is 2+2?"), (1, "Two plus two.\nIt is four.")]
        text = catalog.guidance_text([Strategy.SUMMARIZE], contents, TaskKind.GENERIC, rng)
        for _, content in contents:
            assert content in text

    def test_empty_strategies_rejected(self, catalog, rng):
        with pytest.raises(CatalogError):
            catalog.guidance_text([], [(0, "q")], TaskKind.GENERIC, rng)

    def test_zero_strategy_rejected(self, catalog, rng):
        with pytest.raises(CatalogError):
            catalog.guidance_text([Strategy.ZERO], [(0, "q")], TaskKind.GENERIC, rng)


class TestCatalogFile:
    def test_override_file(self, tmp_path):
        entries = [{"strategy": v.strategy.value, "text": v.text.upper(), "scope": v.scope.value} for v in DEFAULT_VARIANTS]
        path = tmp_path / "catalog.json"
        path.write_text(json.dumps(entries), encoding="utf-8")
        catalog = StrategyCatalog.from_file(path)
        assert catalog.answer_prompt == ANSWER_TEXT.upper()

    def test_missing_strategy_rejected(self):
        variants = [v for v in DEFAULT_VARIANTS if v.strategy is not Strategy.EXPLORE]
        with pytest.raises(CatalogError, match="Explore"):
            StrategyCatalog(variants)

    def test_second_answer_rejected(self):
        extra = PromptVariant(strategy=Strategy.ANSWER, text="Final answer:")
        with pytest.raises(CatalogError):
            StrategyCatalog([*DEFAULT_VARIANTS, extra])

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text('[{"strategy": "Nope", "text": "x"}]', encoding="utf-8")
        with pytest.raises(CatalogError):
            StrategyCatalog.from_file(path)

    def test_multi_line_prompt_rejected(self, tmp_path):
        entries = [{"strategy": v.strategy.value, "text": v.text, "scope": v.scope.value} for v in DEFAULT_VARIANTS]
        entries.append({"strategy": "Reflect", "text": "Wait.\n\nLet me check each step again."})
        path = tmp_path / "catalog.json"
        path.write_text(json.dumps(entries), encoding="utf-8")
        with pytest.raises(CatalogError, match="single line"):
            StrategyCatalog.from_file(path)

    def test_step_content_with_blank_lines_keeps_prompts(self, catalog, rng):
        text = catalog.guidance_text(
            [Strategy.NEXT, Strategy.RECALL], [(0, "q"), (1, "first part\n\nsecond part")], TaskKind.GENERIC, rng
        )
        prompts = guidance_prompts(text)
        assert [catalog.strategy_of(p) for p in prompts] == [Strategy.NEXT, Strategy.RECALL]
