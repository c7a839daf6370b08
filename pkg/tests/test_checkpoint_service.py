"""Tests for run artifacts on disk."""

import json

import numpy as np
import pytest

from automr.core.exceptions import CheckpointError
from automr.services.checkpoint_service import (
    CURVE_FILE,
    FINAL_CHECKPOINT,
    DirectoryCheckpointSink,
    checkpoint_name,
    load_checkpoint,
    trace_filename,
    write_traces,
)
from automr.services.dynamic_sampler import SamplerConfig, sample_skeleton


def curve_record(iteration):
    return {
        "iteration": iteration,
        "mean_reward": -0.5,
        "mean_nodes": 3.0,
        "mean_tokens": 12.0,
        "grad_norm_pre": 2.0,
        "grad_norm_post": 1.0,
    }


class TestSink:
    def test_checkpoints_load_back(self, tmp_path, params):
        sink = DirectoryCheckpointSink(tmp_path / "run")
        sink.save(50, params)
        sink.save_final(params)
        assert checkpoint_name(50) == "checkpoint-00050.json"
        assert load_checkpoint(tmp_path / "run" / "checkpoint-00050.json").identical_to(params)
        assert load_checkpoint(tmp_path / "run" / FINAL_CHECKPOINT).identical_to(params)

    def test_curve_lines(self, tmp_path):
        sink = DirectoryCheckpointSink(tmp_path)
        sink.record(curve_record(1))
        sink.record(curve_record(2))
        lines = (tmp_path / CURVE_FILE).read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["iteration"] for line in lines] == [1, 2]
        assert set(json.loads(lines[0])) == set(curve_record(1))

    def test_existing_curve_replaced(self, tmp_path):
        (tmp_path / CURVE_FILE).write_text("stale\n", encoding="utf-8")
        DirectoryCheckpointSink(tmp_path)
        assert (tmp_path / CURVE_FILE).read_text(encoding="utf-8") == ""

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.json")


class TestTraces:
    def test_trace_filename(self):
        assert trace_filename(3, "What is 6 * 12?") == "0003-what-is-6-12.json"
        assert trace_filename(12, "???") == "0012-query.json"

    async def test_write_traces(self, tmp_path, params, mock_backend):
        traces = [
            await sample_skeleton(q, params, mock_backend, SamplerConfig(budget=16), np.random.default_rng(k))
            for k, q in enumerate(["first question", "second question"])
        ]
        paths = write_traces(tmp_path, traces)
        assert [p.name for p in paths] == ["0000-first-question.json", "0001-second-question.json"]
        document = json.loads(paths[1].read_text(encoding="utf-8"))
        assert document["nodes"][0]["content"] == "second question"
        assert "decisions" in document and "final_answer" in document
