"""Main CLI interface for the skeleton search engine."""

import argparse
import sys
from typing import Any, Dict, List, Optional, Type

from ..core.config import load_settings, setup_logging
from ..core.exceptions import AutoMRError
from ..core.logging import bind_run_context
from .base import BaseCommand
from .commands import (
    EvalCommand,
    ExportDotCommand,
    GradcheckCommand,
    ReplayCommand,
    RsBaselineCommand,
    SampleCommand,
    TrainCommand,
)

COMMANDS: Dict[str, Type[BaseCommand]] = {
    "train": TrainCommand,
    "eval": EvalCommand,
    "sample": SampleCommand,
    "replay": ReplayCommand,
    "gradcheck": GradcheckCommand,
    "export-dot": ExportDotCommand,
    "rs-baseline": RsBaselineCommand,
}


def create_parser() -> argparse.ArgumentParser:
    """Create and configure argument parser."""
    parser = argparse.ArgumentParser(
        prog="automr",
        description="automr: policy-gradient search over meta-reasoning skeletons",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Commands:
  train        Train the strategy policy; write checkpoints and the learning curve
  eval         Evaluate a checkpoint; print accuracy and write per-query traces
  sample       Sample one skeleton for a query and print its trace document
  replay       Replay a structure file with every decision forced
  gradcheck    Check policy gradients against finite differences
  export-dot   Render a skeleton or trace document as DOT
  rs-baseline  Random-search baseline over uniformly sampled structures

Examples:
  automr train --config configs/scripted.cfg --seed 7
  automr eval --config configs/scripted.cfg --checkpoint runs/scripted/checkpoint-final.json
  automr sample --backend mock --query "What is 6 * 12?"
  automr export-dot --structure runs/scripted/rs-best.json --output skeleton.dot
        """
    )

    # Global options
    parser.add_argument("--config", help="Flat section.key=value config file")
    parser.add_argument("--seed", type=int, help="Master seed (run.seed)")
    parser.add_argument(
        "--backend", choices=["mock", "scripted", "http"],
        help="Reasoning backend (backend.kind)"
    )
    parser.add_argument("--budget", type=int, help="Token budget B (sampler.budget)")
    parser.add_argument("--iterations", type=int, help="Training iterations (search.iterations)")
    parser.add_argument("--out", dest="out_dir", help="Output directory (run.out_dir)")
    parser.add_argument(
        "--task", choices=["generic", "math_qa", "multi_choice"],
        help="Task kind for prompt variants (run.task)"
    )
    parser.add_argument(
        "--debug", action="store_true",
        help="Enable debug logging"
    )
    parser.add_argument(
        "--json-logs", action="store_true",
        help="Render log lines as JSON (run.json_logs)"
    )

    # Command-specific options
    parser.add_argument("--dataset", help="JSONL dataset (train, eval, rs-baseline)")
    parser.add_argument("--checkpoint", help="Policy checkpoint to start from or evaluate")
    parser.add_argument("--query", help="Query text (sample, replay)")
    parser.add_argument("--structure", help="Skeleton or trace document (replay, export-dot)")
    parser.add_argument("--output", help="DOT output file (export-dot); stdout if omitted")
    parser.add_argument("--candidates", type=int, help="Number of candidates (rs-baseline)")
    parser.add_argument(
        "--greedy", action="store_true",
        help="Take the most likely strategy at every decision (sample)"
    )

    # Command
    parser.add_argument(
        "command",
        choices=list(COMMANDS),
        help="Command to execute"
    )

    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Map command line flags onto settings sections."""
    return {
        "run": {
            "seed": args.seed,
            "out_dir": args.out_dir,
            "task": args.task,
            "log_level": "DEBUG" if args.debug else None,
            "json_logs": True if args.json_logs else None,
        },
        "backend": {"kind": args.backend},
        "sampler": {"budget": args.budget},
        "search": {"iterations": args.iterations},
    }


def command_kwargs(args: argparse.Namespace) -> Dict[str, Any]:
    """Keyword arguments each command's ``execute`` accepts."""
    if args.command in ("train", "eval"):
        return {"dataset": args.dataset, "checkpoint": args.checkpoint}
    if args.command == "sample":
        return {"query": args.query, "checkpoint": args.checkpoint, "greedy": args.greedy}
    if args.command == "replay":
        return {"structure": args.structure, "query": args.query, "checkpoint": args.checkpoint}
    if args.command == "export-dot":
        return {"structure": args.structure, "output": args.output}
    if args.command == "rs-baseline":
        return {"dataset": args.dataset, "candidates": args.candidates}
    return {}


def main(argv: Optional[List[str]] = None) -> None:
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    try:
        # Load settings: defaults < environment < config file < flags
        settings = load_settings(args.config, overrides_from_args(args))

        # Setup logging
        setup_logging(settings)
        bind_run_context(command=args.command, seed=settings.run.seed, backend=settings.backend.kind)

        command = COMMANDS[args.command](settings)
        command.run(**command_kwargs(args))

    except AutoMRError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        if e.details:
            print(f"Details: {e.details}", file=sys.stderr)
        sys.exit(1)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        sys.exit(130)
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
