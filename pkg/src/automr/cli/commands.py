"""CLI commands for the skeleton search engine."""

import json
import sys
from pathlib import Path
from typing import Any, Optional

from rich.table import Table

from ..core.exceptions import ConfigurationError, PolicyError, SkeletonError
from ..core.models import Skeleton
from ..services.checkpoint_service import TRAIN_DATASET_FILE, DirectoryCheckpointSink, write_json, write_traces
from ..services.dataset_service import save_dataset
from ..services.dynamic_sampler import forced_replay, sample_skeleton, trace_to_document
from ..services.gradcheck import gradcheck
from ..services.reinforce_search import evaluate, make_matcher, random_search_baseline, train
from ..services.skeleton_graph import export_dot, skeleton_from_document, skeleton_to_document
from ..utils.seeding import Stream, stream_rng
from .base import (
    BaseCommand,
    create_backend,
    create_catalog,
    policy_dims,
    sampler_config,
    scripted_spec,
    search_config,
)


def _emit(document: Any) -> None:
    """Write a machine-readable document to stdout."""
    sys.stdout.write(json.dumps(document, ensure_ascii=False, indent=2) + "\n")


def _read_structure(path: str) -> Skeleton:
    structure_path = Path(path)
    if not structure_path.is_file():
        raise SkeletonError(f"Structure file not found: {structure_path}")
    try:
        document = json.loads(structure_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SkeletonError(f"Invalid JSON in structure file {structure_path}", str(e))
    return skeleton_from_document(document)


class TrainCommand(BaseCommand):
    """Train the policy with REINFORCE; write checkpoints and the learning curve."""

    def validate_settings(self) -> None:
        self.settings.validate_for_dataset()

    async def execute(self, dataset: Optional[str] = None, checkpoint: Optional[str] = None) -> None:
        records = self.load_records(dataset or self.settings.run.train_path)
        catalog = create_catalog(self.settings)
        backend = create_backend(self.settings, catalog)
        params = self.load_params(checkpoint)
        config = search_config(self.settings)
        save_dataset(records, self.out_dir / TRAIN_DATASET_FILE)

        try:
            _, curve = await train(
                records,
                config,
                backend,
                params,
                sink=DirectoryCheckpointSink(self.out_dir),
                catalog=catalog,
                matcher=make_matcher(self.settings.search.matcher),
            )
        finally:
            await backend.aclose()

        if len(curve):
            table = Table(title="Training")
            table.add_column("Iterations", justify="right")
            table.add_column("First reward", justify="right")
            table.add_column("Last 20 mean", justify="right")
            table.add_row(
                str(len(curve)),
                f"{curve.mean_rewards[0]:+.3f}",
                f"{curve.moving_average(20)[-1]:+.3f}",
            )
            self.console.print(table)
        self.console.print(f"Artifacts written to {self.out_dir}")


class EvalCommand(BaseCommand):
    """Evaluate a checkpoint; print accuracy and write per-query traces."""

    def validate_settings(self) -> None:
        self.settings.validate_for_http()

    async def execute(self, dataset: Optional[str] = None, checkpoint: Optional[str] = None) -> None:
        records = self.load_records(dataset or self.settings.run.eval_path)
        catalog = create_catalog(self.settings)
        backend = create_backend(self.settings, catalog)
        params = self.load_params(checkpoint)

        try:
            result = await evaluate(
                records,
                params,
                backend,
                search_config(self.settings),
                catalog=catalog,
                matcher=make_matcher(self.settings.search.matcher),
            )
        finally:
            await backend.aclose()

        paths = write_traces(self.out_dir, result.traces)
        self.console.print(f"Accuracy: {result.accuracy:.3f} ({result.correct}/{result.total})")
        self.logger.info("Traces written", count=len(paths), out_dir=str(self.out_dir))


class SampleCommand(BaseCommand):
    """Sample one skeleton for a query and print its trace document."""

    def validate_settings(self) -> None:
        self.settings.validate_for_http()

    async def execute(
        self, query: Optional[str] = None, checkpoint: Optional[str] = None, greedy: bool = False
    ) -> None:
        if not query:
            if self.settings.backend.kind != "scripted":
                raise ConfigurationError("A query is required", "Use --query")
            query = scripted_spec(self.settings).make_query(0)

        catalog = create_catalog(self.settings)
        backend = create_backend(self.settings, catalog)
        params = self.load_params(checkpoint)
        try:
            trace = await sample_skeleton(
                query,
                params,
                backend,
                sampler_config(self.settings),
                stream_rng(self.settings.run.seed, Stream.EPISODE, 0),
                catalog=catalog,
                task=self.settings.run.task,
                greedy=greedy,
            )
        finally:
            await backend.aclose()
        _emit(trace_to_document(trace))


class ReplayCommand(BaseCommand):
    """Replay a structure file for a query with every decision forced."""

    def validate_settings(self) -> None:
        self.settings.validate_for_http()

    async def execute(
        self,
        structure: Optional[str] = None,
        query: Optional[str] = None,
        checkpoint: Optional[str] = None,
    ) -> None:
        if not structure:
            raise ConfigurationError("A structure file is required", "Use --structure")
        skeleton = _read_structure(structure)
        query = query or skeleton.query
        if not query:
            raise ConfigurationError("A query is required", "Use --query")

        catalog = create_catalog(self.settings)
        backend = create_backend(self.settings, catalog)
        params = self.load_params(checkpoint)
        try:
            trace, mlp_calls = await forced_replay(
                skeleton,
                query,
                backend,
                params,
                config=sampler_config(self.settings),
                rng=stream_rng(self.settings.run.seed, Stream.PROMPT),
                catalog=catalog,
                task=self.settings.run.task,
            )
        finally:
            await backend.aclose()

        self.logger.info("Structure replayed", nodes=trace.skeleton.size, mlp_calls=mlp_calls)
        _emit({**trace_to_document(trace), "mlp_call_count": mlp_calls})


class GradcheckCommand(BaseCommand):
    """Compare analytic policy gradients with central differences."""

    def validate_settings(self) -> None:
        pass

    async def execute(self, **kwargs: Any) -> None:
        report = gradcheck(policy_dims(self.settings), seed=self.settings.run.seed)

        table = Table(title=f"Gradient check ({report.coordinates_checked} coordinates)")
        table.add_column("Block")
        table.add_column("Max relative error", justify="right")
        for block, error in report.block_errors.items():
            table.add_row(block, f"{error:.3e}")
        self.console.print(table)
        self.console.print(f"max relative error: {report.max_relative_error:.3e}")

        if not report.passed:
            raise PolicyError(
                "Gradient check failed",
                f"max relative error {report.max_relative_error:.3e} > {report.tolerance:.0e}",
            )


class ExportDotCommand(BaseCommand):
    """Render a skeleton or trace document as DOT."""

    def validate_settings(self) -> None:
        pass

    async def execute(self, structure: Optional[str] = None, output: Optional[str] = None) -> None:
        if not structure:
            raise ConfigurationError("A structure file is required", "Use --structure")
        source = export_dot(_read_structure(structure))
        if output:
            path = Path(output)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(source, encoding="utf-8")
            self.logger.info("DOT written", path=str(path))
        else:
            sys.stdout.write(source)


class RsBaselineCommand(BaseCommand):
    """Random-search baseline: best of n uniformly sampled structures."""

    def validate_settings(self) -> None:
        self.settings.validate_for_dataset()

    async def execute(self, dataset: Optional[str] = None, candidates: Optional[int] = None) -> None:
        records = self.load_records(dataset or self.settings.run.train_path)
        catalog = create_catalog(self.settings)
        backend = create_backend(self.settings, catalog)
        n_candidates = candidates or self.settings.search.rs_candidates

        try:
            result = await random_search_baseline(
                records,
                backend,
                n_candidates=n_candidates,
                config=search_config(self.settings),
                catalog=catalog,
                matcher=make_matcher(self.settings.search.matcher),
                dims=policy_dims(self.settings),
            )
        finally:
            await backend.aclose()

        table = Table(title=f"Random search ({n_candidates} candidates)")
        table.add_column("Candidate", justify="right")
        table.add_column("Nodes", justify="right")
        table.add_column("First edge")
        table.add_column("Accuracy", justify="right")
        for score in result.candidates:
            marker = " *" if score.index == result.best_index else ""
            table.add_row(
                f"{score.index}{marker}",
                str(score.size),
                score.first_edge.value if score.first_edge else "-",
                f"{score.accuracy:.3f}",
            )
        self.console.print(table)

        path = write_json(self.out_dir / "rs-best.json", skeleton_to_document(result.structure))
        self.console.print(
            f"Best candidate {result.best_index}: accuracy {result.accuracy:.3f}, written to {path}"
        )
