"""
Main entry point for the matrix RL lab

Usage:
    python main.py run <config|preset> [--workers N] [--out DIR] [--master-seed K]
    python main.py compare <run_dir> <run_dir> [...] [--out DIR]
    python main.py validate <config|preset>
    python main.py presets list

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

import argparse
import sys
from typing import List, Optional

from src.exceptions import ConfigError, IncompatibleRuns, LabError
from src.experiment import compare, list_presets, resolve_config_path, run_scenario, validate_config
from src.logging_config import setup_logging, get_logger

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Biased upper-confidence matrix RL and meta-learned bias experiments"
    )
    parser.add_argument('--log-level', default='WARNING', help="Logging level (default: WARNING)")
    parser.add_argument('--log-dir', default=None, help="Directory for the rotating log file")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="Run an experiment config or preset")
    run.add_argument('config', help="Path to an .ini config or a preset name")
    run.add_argument('--workers', type=int, default=1, help="Worker processes over (seed, estimator) pairs")
    run.add_argument('--out', default=None, help="Output directory (overrides [output] directory)")
    run.add_argument('--master-seed', type=int, default=None, help="Master seed (overrides [run] master_seed)")

    cmp = sub.add_parser('compare', help="Paired-by-seed comparison of finished runs")
    cmp.add_argument('run_dirs', nargs='+', help="Run directories; the first entry is the reference")
    cmp.add_argument('--out', default=None, help="Directory for comparison.csv")

    val = sub.add_parser('validate', help="Check a config without running it")
    val.add_argument('config', help="Path to an .ini config or a preset name")

    presets = sub.add_parser('presets', help="Shipped scenario presets")
    presets.add_argument('action', choices=['list'])
    return parser


def command_run(args: argparse.Namespace) -> int:
    config = validate_config(resolve_config_path(args.config))
    if args.out is not None:
        config.output.directory = args.out
    if args.master_seed is not None:
        config.run.master_seed = args.master_seed
    if args.workers < 1:
        raise ConfigError('--workers', f"must be at least 1, got {args.workers}")

    print("=" * 60)
    print(f"Matrix RL Lab - {config.name}")
    print("=" * 60)
    result = run_scenario(config, workers=args.workers)

    for estimator, entry in result.summary['estimators'].items():
        mean, stderr = entry.get('transfer_regret'), entry.get('stderr')
        if mean is None:
            print(f"  {estimator:<14} no completed test tasks")
        else:
            print(f"  {estimator:<14} transfer regret {mean:10.4f} +/- {stderr:.4f}")
    print("-" * 40)
    print(f"Bound violations: {result.summary['bounds']['violations']} / {result.summary['bounds']['runs']}")
    print(f"Lemma failures:   {result.summary['lemmas']['failures']} / {result.summary['lemmas']['checks']}")
    print(f"Results written to {result.run_dir}")

    if result.status != 'complete':
        print("❌ Some meta-training runs aborted; partial records were written")
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


def command_compare(args: argparse.Namespace) -> int:
    comparison = compare(args.run_dirs, out_dir=args.out)
    print("=" * 60)
    print("Transfer regret comparison (difference = entry - reference)")
    print("=" * 60)
    print(comparison.text)
    if comparison.path is not None:
        print(f"\nComparison written to {comparison.path}")
    return EXIT_OK


def command_validate(args: argparse.Namespace) -> int:
    config = validate_config(resolve_config_path(args.config))
    print(f"✅ {config.name}: configuration is valid (hash {config.config_hash[:12]})")
    return EXIT_OK


def command_presets(args: argparse.Namespace) -> int:
    for name, description in list_presets():
        print(f"  {name:<18} {description}")
    return EXIT_OK


COMMANDS = {
    'run': command_run,
    'compare': command_compare,
    'validate': command_validate,
    'presets': command_presets
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(log_level=args.log_level, log_dir=args.log_dir)
    logger = get_logger(__name__)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"❌ Configuration error in '{e.field}': {e.reason}")
        return EXIT_CONFIG_ERROR
    except IncompatibleRuns as e:
        print(f"❌ {e.message}")
        return EXIT_RUNTIME_ERROR
    except (LabError, OSError) as e:
        print(f"❌ {str(e)}")
        logger.error(f"Command '{args.command}' failed: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
