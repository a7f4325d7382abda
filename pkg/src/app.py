"""
Command verbs for the bandit experiment runner.

Single responsibility: argument parsing and the verb handlers
(run, summarize, plotdata, validate, generate-network). Handlers return process
exit codes: 0 success, 2 invalid config or inputs, 1 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

import config as config_module
from harness import emit_plot_data, load_traces, run_experiment, summarize, validate_experiment
from road_network import generate_grid_network
from utils import EXPERIMENT_CONFIG_USAGE, format_validation_error, parse_experiment_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


def _load_config(path: str):
    """Parse a config file; returns (config, None) or (None, exit code) after reporting."""
    config_path = Path(path)
    try:
        return parse_experiment_config(config_path), None
    except ValidationError as e:
        print(f"Error: invalid config {config_path}:\n{format_validation_error(e)}", file=sys.stderr)
        print(EXPERIMENT_CONFIG_USAGE, file=sys.stderr)
        return None, EXIT_INVALID
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return None, EXIT_INVALID


def cmd_validate(args: argparse.Namespace) -> int:
    """Check a config and the files it references without running anything."""
    config, code = _load_config(args.config)
    if config is None:
        return code
    try:
        resources = validate_experiment(config, Path(args.config).resolve().parent)
    except (ValueError, FileNotFoundError, ValidationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if resources.dataset is not None:
        detail = f"dataset {resources.dataset.name}: {len(resources.dataset)} rows, {resources.dataset.n_classes} classes"
    else:
        detail = f"network: {len(resources.network.vertices)} vertices, {resources.network.n_edges} edges"
    print(f"OK: {config.name} ({detail})")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config, code = _load_config(args.config)
    if config is None:
        return code
    base_dir = Path(args.config).resolve().parent
    try:
        validate_experiment(config, base_dir)
    except (ValueError, FileNotFoundError, ValidationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    try:
        summaries = run_experiment(config, base_dir, Path(args.output) if args.output else None)
    except Exception as e:
        logger.exception("Experiment failed: name=%s", config.name)
        print(f"Error during experiment: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for s in summaries:
        print(f"{s.agent}: mean={s.mean:.3f} sd={s.sd:.3f} seeds={len(s.seeds)}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    try:
        summaries = summarize(Path(args.results))
    except (ValueError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps([s.model_dump(mode="json") for s in summaries], indent=2))
    return EXIT_OK


def cmd_plotdata(args: argparse.Namespace) -> int:
    results = Path(args.results)
    try:
        frame = emit_plot_data(load_traces(results))
    except (ValueError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    target = Path(args.output) if args.output else results / "plotdata.csv"
    frame.to_csv(target, index=False, lineterminator="\n")
    print(f"Wrote {len(frame)} rows to {target}")
    return EXIT_OK


def cmd_generate_network(args: argparse.Namespace) -> int:
    try:
        network = generate_grid_network(args.rows, args.cols, args.spacing, args.seed)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    network.save(Path(args.output))
    print(f"Wrote network with {network.n_edges} edges to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tebandit",
        description="Tree-ensemble contextual bandit experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment config.")
    run.add_argument("config", help="Experiment JSON file.")
    run.add_argument("--output", help=f"Results directory (default: {config_module.settings.output_root}/<name>).")
    run.set_defaults(handler=cmd_run)

    summ = sub.add_parser("summarize", help="Summarize final regret per agent in a results directory.")
    summ.add_argument("results", help="Results directory containing traces/.")
    summ.set_defaults(handler=cmd_summarize)

    plot = sub.add_parser("plotdata", help="Write mean/SD cumulative-regret curves as long-format CSV.")
    plot.add_argument("results", help="Results directory containing traces/.")
    plot.add_argument("--output", help="CSV path (default: <results>/plotdata.csv).")
    plot.set_defaults(handler=cmd_plotdata)

    val = sub.add_parser("validate", help="Validate a config and the files it references.")
    val.add_argument("config", help="Experiment JSON file.")
    val.set_defaults(handler=cmd_validate)

    gen = sub.add_parser("generate-network", help="Write a synthetic grid road network as JSON.")
    gen.add_argument("output", help="Network JSON path.")
    gen.add_argument("--rows", type=int, default=10)
    gen.add_argument("--cols", type=int, default=12)
    gen.add_argument("--spacing", type=float, default=250.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(handler=cmd_generate_network)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)
