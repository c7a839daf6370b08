"""Run artifacts on disk: checkpoints, the learning curve and trace files."""

import json
from pathlib import Path
from typing import Any, List, Sequence, Union

from slugify import slugify

from ..core.exceptions import CheckpointError
from ..core.logging import get_logger
from ..core.types import CurveRecord
from .dynamic_sampler import EpisodeTrace, trace_to_document
from .policy_net import PolicyParameters, deserialize_checkpoint, serialize_checkpoint
from .reinforce_search import CheckpointSink

logger = get_logger(__name__)

CURVE_FILE = "learning_curve.jsonl"
FINAL_CHECKPOINT = "checkpoint-final.json"
TRACE_DIR = "traces"
TRAIN_DATASET_FILE = "train.jsonl"
SLUG_MAX_LENGTH = 60


def checkpoint_name(iteration: int) -> str:
    return f"checkpoint-{iteration:05d}.json"


def load_checkpoint(path: Union[str, Path]) -> PolicyParameters:
    checkpoint_path = Path(path)
    if not checkpoint_path.is_file():
        raise CheckpointError(f"Checkpoint not found: {checkpoint_path}")
    return deserialize_checkpoint(checkpoint_path.read_bytes())


def write_json(path: Path, document: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, ensure_ascii=False, indent=2)
        f.write("\n")
    return path


class DirectoryCheckpointSink(CheckpointSink):
    """Writes checkpoints and ``learning_curve.jsonl`` under one directory.

    An existing learning curve in the directory is replaced.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.curve_path = self.out_dir / CURVE_FILE
        self.curve_path.write_text("", encoding="utf-8")

    def _write(self, name: str, params: PolicyParameters) -> Path:
        path = self.out_dir / name
        path.write_bytes(serialize_checkpoint(params))
        logger.info("checkpoint_written", path=str(path))
        return path

    def save(self, iteration: int, params: PolicyParameters) -> None:
        self._write(checkpoint_name(iteration), params)

    def save_final(self, params: PolicyParameters) -> None:
        self._write(FINAL_CHECKPOINT, params)

    def record(self, record: CurveRecord) -> None:
        with open(self.curve_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record) + "\n")


def trace_filename(index: int, query: str) -> str:
    slug = slugify(query, max_length=SLUG_MAX_LENGTH) or "query"
    return str(index).zfill(4) + "-" + slug + ".json"


def write_traces(out_dir: Union[str, Path], traces: Sequence[EpisodeTrace]) -> List[Path]:
    """One trace document per query under ``out_dir/traces``."""
    trace_dir = Path(out_dir) / TRACE_DIR
    return [
        write_json(trace_dir / trace_filename(index, trace.skeleton.query), trace_to_document(trace))
        for index, trace in enumerate(traces)
    ]
