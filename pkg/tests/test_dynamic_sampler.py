"""Tests for skeleton sampling, forced replay and log-probability accounting."""

import numpy as np
import pytest

from automr.core.exceptions import BackendError, PolicyError, SamplerError, SkeletonError
from automr.core.models import NON_ZERO_STRATEGIES, Skeleton, SkeletonEdge, StepNode, Strategy
from automr.services.dynamic_sampler import (
    TERMINATED_ALL_ZERO,
    TERMINATED_BUDGET,
    TERMINATED_MAX_NODES,
    SamplerConfig,
    final_answer,
    forced_replay,
    sample_skeleton,
    skeleton_log_prob,
    trace_to_document,
)
from automr.services.policy_net import (
    PolicyParameters,
    batch_log_probs,
    conditioning_weights,
    forward,
    init_params,
    zero_params,
)
from automr.services.reasoning_backend import MockBackend, ScriptedBackend, ScriptedEnvSpec
from automr.services.skeleton_graph import build_parallel, build_sequential, validate
from automr.services.strategy_catalog import StrategyCatalog


class RecordingBackend(MockBackend):
    """Mock backend that remembers every request."""

    def __init__(self, d_c: int):
        super().__init__(d_c=d_c, seed=0, step_words=4)
        self.steps = []
        self.answers = []

    async def generate_step(self, context, guidance, max_tokens):
        self.steps.append((list(context), guidance, max_tokens))
        return await super().generate_step(context, guidance, max_tokens)

    async def generate_answer(self, context, answer_prompt, max_tokens):
        self.answers.append((list(context), answer_prompt, max_tokens))
        return await super().generate_answer(context, answer_prompt, max_tokens)


class FailingBackend(MockBackend):
    async def generate_step(self, context, guidance, max_tokens):
        raise BackendError("service unavailable")


def random_structure(rng: np.random.Generator, max_nodes: int = 8) -> Skeleton:
    """Random valid skeleton: every node gets a nonempty set of earlier parents."""
    size = int(rng.integers(1, max_nodes + 1))
    nodes = tuple(StepNode(index=i) for i in range(size))
    edges = []
    for i in range(1, size):
        parents = [j for j in range(i) if rng.random() < 0.4] or [int(rng.integers(i))]
        for j in parents:
            label = NON_ZERO_STRATEGIES[int(rng.integers(len(NON_ZERO_STRATEGIES)))]
            edges.append(SkeletonEdge(source=j, target=i, strategy=label))
    return Skeleton(nodes=nodes, edges=tuple(edges))


class TestSampleSkeleton:
    async def test_deterministic_trace(self, params, small_dims):
        config = SamplerConfig(budget=64, seed=42)

        async def run():
            backend = MockBackend(d_c=small_dims.d_c, seed=42, step_words=8)
            return await sample_skeleton("What is 6 * 12?", params, backend, config, np.random.default_rng(42))

        first, second = await run(), await run()
        assert trace_to_document(first) == trace_to_document(second)
        assert first.core_log_prob == second.core_log_prob
        for a, b in zip(first.decisions, second.decisions):
            assert a.features.tobytes() == b.features.tobytes()

    async def test_zero_budget(self, params, mock_backend, rng):
        trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=0), rng)
        assert trace.skeleton.size == 1
        assert trace.decisions == () and trace.termination_decisions == ()
        assert trace.terminated_by == TERMINATED_BUDGET
        assert trace.final_answer

    async def test_forced_zero_terminates_at_first_node(self, forced_params, small_dims, mock_backend, rng):
        params = forced_params(Strategy.ZERO)
        trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(), rng)
        assert trace.skeleton.size == 1
        assert trace.terminated_by == TERMINATED_ALL_ZERO
        assert len(trace.termination_decisions) == 1
        assert trace.termination_decisions[0].chosen is Strategy.ZERO
        assert trace.total_log_prob == 0.0

    async def test_forced_next_builds_chain_until_budget(self, forced_params, small_dims, rng):
        params = forced_params(Strategy.NEXT)
        backend = MockBackend(d_c=small_dims.d_c, seed=1, step_words=5)
        trace = await sample_skeleton("q", params, backend, SamplerConfig(budget=40), rng)
        assert trace.terminated_by == TERMINATED_BUDGET
        assert trace.skeleton.budget_used == 40
        assert validate(trace.skeleton).ok

    async def test_max_nodes_cap(self, forced_params, small_dims, mock_backend, rng):
        params = forced_params(Strategy.REFLECT)
        trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=10_000, max_nodes=4), rng)
        assert trace.terminated_by == TERMINATED_MAX_NODES
        assert trace.skeleton.size == 4

    @pytest.mark.parametrize("budget", [0, 1, 16, 1024])
    async def test_budget_safety(self, params, small_dims, budget):
        backend = MockBackend(d_c=small_dims.d_c, seed=3, step_words=8)
        for seed in range(250):
            config = SamplerConfig(budget=budget, max_nodes=24)
            trace = await sample_skeleton("q", params, backend, config, np.random.default_rng(seed))
            assert trace.skeleton.budget_used <= budget
            assert validate(trace.skeleton).ok

    async def test_source_holds_query(self, params, mock_backend, rng):
        trace = await sample_skeleton("the query", params, mock_backend, SamplerConfig(budget=32), rng)
        assert trace.skeleton.nodes[0].content == "the query"
        assert trace.skeleton.nodes[0].token_count == 0

    async def test_conditioning_structure(self, params, mock_backend, rng):
        trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=64), rng)
        records = trace.decisions + trace.termination_decisions
        by_node = {}
        for record in records:
            by_node.setdefault(record.node_i, []).append(record)
        for i, round_records in by_node.items():
            assert [r.node_j for r in round_records] == list(range(i - 1, -1, -1))
            for position, record in enumerate(round_records):
                assert record.context_size == i
                assert record.conditioned_on == tuple(r.chosen for r in round_records[:position])

    async def test_quadratic_decision_count(self, params, mock_backend):
        for seed in range(20):
            trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=256), np.random.default_rng(seed))
            if trace.terminated_by != TERMINATED_ALL_ZERO:
                continue
            size = trace.skeleton.size
            assert len(trace.decisions) == size * (size - 1) // 2
            assert len(trace.termination_decisions) == size

    async def test_zero_outcomes_excluded_from_conditioning(self, params, mock_backend, rng):
        config = SamplerConfig(budget=64, condition_on_zero=False)
        trace = await sample_skeleton("q", params, mock_backend, config, rng)
        for record in trace.decisions:
            assert Strategy.ZERO not in record.conditioned_on

    async def test_edges_match_nonzero_decisions(self, params, mock_backend, rng):
        trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=64), rng)
        expected = {(r.node_j, r.node_i, r.chosen) for r in trace.decisions if r.chosen is not Strategy.ZERO}
        assert trace.skeleton.structure()[1] == expected

    async def test_dimension_mismatch(self, params, rng):
        with pytest.raises(PolicyError):
            await sample_skeleton("q", params, MockBackend(d_c=8), SamplerConfig(), rng)

    async def test_backend_failure_names_node(self, forced_params, small_dims, rng):
        params = forced_params(Strategy.NEXT)
        with pytest.raises(BackendError) as excinfo:
            await sample_skeleton("q", params, FailingBackend(d_c=small_dims.d_c), SamplerConfig(), rng)
        assert excinfo.value.node_index == 1
        assert excinfo.value.message.startswith("node 1:")

    async def test_guidance_uses_predecessor_contents(self, forced_params, small_dims, rng):
        params = forced_params(Strategy.NEXT)
        backend = RecordingBackend(small_dims.d_c)
        await sample_skeleton("the query", params, backend, SamplerConfig(budget=8, max_nodes=3), rng)
        _, guidance, _ = backend.steps[0]
        assert guidance.startswith("Step 0: the query")


class TestForcedReplay:
    async def test_sequential_call_count(self, params, mock_backend):
        trace, calls = await forced_replay(build_sequential(4, Strategy.NEXT), "q", mock_backend, params)
        assert calls == 15
        assert trace.skeleton.structure() == build_sequential(4, Strategy.NEXT).structure()

    async def test_parallel_reproduced(self, params, mock_backend):
        structure = build_parallel([2, 2], Strategy.EXPLORE)
        trace, calls = await forced_replay(structure, "q", mock_backend, params)
        assert trace.skeleton.structure() == structure.structure()
        assert calls == structure.size * (structure.size + 1) // 2

    async def test_fuzzed_structures_reproduced(self, params, mock_backend):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            structure = random_structure(rng)
            assert validate(structure).ok
            trace, calls = await forced_replay(structure, "q", mock_backend, params)
            assert trace.skeleton.structure() == structure.structure()
            assert calls == structure.size * (structure.size + 1) // 2
            assert trace.terminated_by == TERMINATED_ALL_ZERO
            assert all(r.chosen is Strategy.ZERO for r in trace.termination_decisions)

    async def test_uniform_log_prob(self, small_dims, mock_backend):
        trace, _ = await forced_replay(build_sequential(2, Strategy.NEXT), "q", mock_backend, zero_params(small_dims))
        assert skeleton_log_prob(zero_params(small_dims), trace, include_termination=False) == pytest.approx(
            -6.2383246, abs=1e-7
        )
        assert trace.core_log_prob == pytest.approx(3 * np.log(1 / 8), abs=1e-12)
        assert trace.termination_log_prob == pytest.approx(3 * np.log(1 / 8), abs=1e-12)

    async def test_replay_respects_budget(self, params):
        backend = MockBackend(d_c=16, seed=5, step_words=50)
        structure = build_sequential(5, Strategy.NEXT, budget=12)
        trace, _ = await forced_replay(structure, "q", backend, params)
        assert trace.skeleton.budget_used <= 12
        assert all(node.token_count >= 1 for node in trace.skeleton.nodes[1:])

    async def test_budget_too_small(self, params, mock_backend):
        with pytest.raises(SamplerError):
            await forced_replay(build_sequential(5, Strategy.NEXT, budget=3), "q", mock_backend, params)

    async def test_invalid_structure_rejected(self, params, mock_backend):
        nodes = tuple(StepNode(index=i) for i in range(3))
        structure = Skeleton(nodes=nodes, edges=(SkeletonEdge(source=0, target=1, strategy=Strategy.NEXT),))
        with pytest.raises(SkeletonError):
            await forced_replay(structure, "q", mock_backend, params)


class TestSkeletonLogProb:
    async def test_single_decision(self, params, mock_backend):
        trace, _ = await forced_replay(build_sequential(1, Strategy.RECALL), "q", mock_backend, params)
        assert len(trace.decisions) == 1
        assert skeleton_log_prob(params, trace, False) == pytest.approx(trace.decisions[0].log_prob, abs=1e-12)

    async def test_recomputed_matches_stored(self, small_dims, mock_backend):
        for seed in range(200):
            params = init_params(small_dims, seed=seed // 20)
            trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=48), np.random.default_rng(seed))
            stored = sum(r.log_prob for r in trace.decisions if r.node_i <= trace.skeleton.size - 1)
            assert abs(skeleton_log_prob(params, trace, False) - trace.core_log_prob) <= 1e-10
            assert abs(trace.core_log_prob - stored) <= 1e-10
            assert abs(skeleton_log_prob(params, trace, True) - trace.total_log_prob) <= 1e-10

    async def test_rescored_under_new_embeddings(self, params, mock_backend):
        for seed in range(50):
            trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=48), np.random.default_rng(seed))
            if any(r.conditioned_on for r in trace.decisions + trace.termination_decisions):
                break
        else:
            pytest.fail("no episode conditioned on an earlier strategy")

        blocks = params.blocks()
        blocks["strategy_embeddings"] = 2.0 * params.strategy_embeddings
        updated = PolicyParameters(**blocks)

        dims = params.dims
        expected = 0.0
        for record in trace.decisions + trace.termination_decisions:
            x = record.features.copy()
            x[dims.d_c:dims.d_c + dims.d_s] = conditioning_weights(record.conditioned_on) @ updated.strategy_embeddings
            expected += forward(updated, x).log_probs[record.chosen.ordinal]

        assert skeleton_log_prob(updated, trace, True) == pytest.approx(expected, abs=1e-10)
        records = trace.decisions + trace.termination_decisions
        stale = batch_log_probs(
            updated, np.stack([r.features for r in records]), np.array([r.chosen.ordinal for r in records])
        ).sum()
        assert abs(expected - stale) > 1e-8


class TestFinalAnswer:
    async def test_source_only_context(self, small_dims, catalog):
        backend = RecordingBackend(small_dims.d_c)
        await final_answer(["the query"], backend, catalog)
        context, prompt, _ = backend.answers[0]
        assert context == ["the query"]
        assert prompt == catalog.answer_prompt

    async def test_context_in_index_order(self, small_dims):
        backend = RecordingBackend(small_dims.d_c)
        await final_answer(["q", "first", "second"], backend, max_tokens=7)
        context, _, max_tokens = backend.answers[0]
        assert context == ["q", "first", "second"]
        assert max_tokens == 7

    async def test_scripted_answer(self, scripted_backend, scripted_spec):
        query = scripted_spec.make_query(3)
        answer = await final_answer([query, "strategy:Recall step1w0"], scripted_backend)
        assert answer == scripted_spec.gold_answer(query)
        wrong = await final_answer([query, "strategy:Next step1w0"], scripted_backend)
        assert wrong != scripted_spec.gold_answer(query)

    async def test_empty_context(self, mock_backend):
        with pytest.raises(SamplerError):
            await final_answer([], mock_backend)

    async def test_answer_not_counted_in_budget(self, forced_params, small_dims, rng):
        backend = RecordingBackend(small_dims.d_c)
        params = forced_params(Strategy.NEXT)
        trace = await sample_skeleton("q", params, backend, SamplerConfig(budget=4, answer_max_tokens=9), rng)
        assert trace.skeleton.budget_used <= 4
        assert backend.answers[0][2] == 9


class TestScriptedEpisodes:
    async def test_forced_target_gets_gold(self, small_dims, catalog):
        spec = ScriptedEnvSpec(target_strategy=Strategy.RECALL)
        backend = ScriptedBackend(spec, catalog=catalog, d_c=small_dims.d_c)
        query = spec.make_query(0)
        structure = build_sequential(1, Strategy.RECALL, budget=64)
        trace, _ = await forced_replay(structure, query, backend, zero_params(small_dims), catalog=StrategyCatalog())
        assert trace.final_answer == spec.gold_answer(query)


class TestTraceDocument:
    async def test_fields(self, params, mock_backend, rng):
        trace = await sample_skeleton("q", params, mock_backend, SamplerConfig(budget=32), rng)
        document = trace_to_document(trace)
        assert {"nodes", "edges", "budget", "budget_used", "decisions", "termination_decisions",
                "terminated_by", "final_answer"} <= set(document)
        assert len(document["decisions"]) == len(trace.decisions)
        if document["decisions"]:
            assert set(document["decisions"][0]) == {"i", "j", "chosen", "log_prob"}
