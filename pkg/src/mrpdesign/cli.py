"""Command line interface.

Subcommands: `generate`, `design`, `backtest`, `experiment` and `study`.
Configuration resolves as built-in defaults, then a YAML file given with
`--config`, then explicitly given flags. Exit codes: 0 success, 2 usage,
3 non-convergence, 4 infeasible variance level, 5 data error.
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import yaml  # type: ignore

from .data import EXIT_OK, EXIT_USAGE, PRICE_KINDS, PSI_MODES
from .errors import ConfigError, DataError, MrpError
from .experiment import (
    DEFAULT_CONFIG,
    ExperimentConfig,
    run_backtest,
    run_design,
    run_experiment,
    run_generate,
    run_seed_study,
)
from .writers import write_json

logger = logging.getLogger(__name__)

#: argparse destinations that are not configuration keys
_NOT_CONFIG = ("command", "config", "seeds", "verbose")


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """Defaults overlaid with the flat mapping in a YAML file

    Raises:
        ConfigError: If the file cannot be read or does not hold a mapping.
    """
    if path is None:
        return dict(DEFAULT_CONFIG)
    try:
        with Path(path).open("r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    return DEFAULT_CONFIG | {str(k).replace("-", "_"): v for (k, v) in data.items()}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Built-in defaults, then the config file, then flags that were given"""
    merged = load_config(args.config)
    flags = {
        k: v
        for (k, v) in vars(args).items()
        if k not in _NOT_CONFIG and v is not None
    }
    return ExperimentConfig.from_mapping(merged | flags)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="Flat YAML configuration file")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Random seed")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Log solver iterations"
    )


def _add_synthetic(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--assets", type=int, default=None, help="Asset count M")
    parser.add_argument("--rank", type=int, default=None, help="Cointegration rank r")
    parser.add_argument("--length", type=int, default=None, help="Sample count T")
    parser.add_argument(
        "--spread-mode",
        dest="spread_mode",
        choices=("true_beta", "perturbed"),
        default=None,
        help="Hedge matrix of synthetic spreads",
    )
    parser.add_argument(
        "--spread-sd",
        dest="spread_sd",
        type=float,
        default=None,
        help="Hedge perturbation standard deviation",
    )


def _add_data(parser: argparse.ArgumentParser) -> None:
    _add_synthetic(parser)
    parser.add_argument("--data", default=None, help="Price CSV (synthetic if omitted)")
    parser.add_argument("--hedge", default=None, help="Hedge matrix CSV")
    parser.add_argument("--prices", choices=PRICE_KINDS, default=None)


def _add_solver(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--p", type=int, default=None, help="Lag order")
    parser.add_argument("--nu", type=float, default=None, help="Variance level")
    parser.add_argument(
        "--nu-scale",
        dest="nu_scale",
        type=float,
        default=None,
        help="Variance level as a multiple of nu_min when --nu is not given",
    )
    parser.add_argument("--psi", choices=PSI_MODES, default=None)
    parser.add_argument(
        "--space", choices=("original", "whitened"), default=None, help="MM coordinates"
    )
    parser.add_argument(
        "--n-starts", dest="n_starts", type=int, default=None, help="MM starting points"
    )
    parser.add_argument(
        "--max-iter", dest="max_iter", type=int, default=None, help="MM iteration cap"
    )


def _add_windows(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tin", type=int, default=None, help="In-sample length")
    parser.add_argument("--tout", type=int, default=None, help="Out-of-sample length")
    parser.add_argument("--windows", type=int, default=None, help="Window count")
    parser.add_argument(
        "--parallel-windows",
        dest="parallel_windows",
        action="store_true",
        default=None,
        help="Evaluate windows concurrently",
    )
    parser.add_argument(
        "--annualization",
        type=float,
        default=None,
        help="Periods per year for annualized Sharpe ratios",
    )
    parser.add_argument(
        "--parquet",
        action="store_true",
        default=None,
        help="Also write plot-ready series as parquet",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrpdesign",
        description="Design and backtest mean-reverting portfolios of spreads",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="Simulate a cointegrated market")
    _add_common(generate)
    _add_synthetic(generate)
    generate.add_argument("--p", type=int, default=None, help="Lag order for nu_min")
    generate.add_argument("--tin", type=int, default=None, help="Range for nu_min")

    design = sub.add_parser("design", help="Design a portfolio on the training range")
    _add_common(design)
    _add_data(design)
    _add_solver(design)
    design.add_argument("--tin", type=int, default=None, help="In-sample length")

    backtest = sub.add_parser("backtest", help="Trade fixed weights over windows")
    _add_common(backtest)
    _add_data(backtest)
    _add_windows(backtest)
    backtest.add_argument("--weights", default=None, help="Weights JSON from design")

    for (name, text) in (
        ("experiment", "Design and trade over rolling windows"),
        ("study", "Run the experiment over several seeds"),
    ):
        command = sub.add_parser(name, help=text)
        _add_common(command)
        _add_data(command)
        _add_solver(command)
        _add_windows(command)
        command.add_argument(
            "--compare",
            choices=("all", "mrp"),
            default=None,
            help="Also trade each single spread, or the portfolio only",
        )
        if name == "study":
            command.add_argument(
                "--seeds", type=int, default=20, help="Number of seeds, from --seed"
            )
    return parser


def _run(args: argparse.Namespace, cfg: ExperimentConfig) -> Dict[str, Any]:
    commands: Dict[str, Callable[[ExperimentConfig], Dict[str, Any]]] = {
        "generate": run_generate,
        "design": run_design,
        "backtest": run_backtest,
        "experiment": run_experiment,
    }
    if args.command == "study":
        return run_seed_study(cfg, range(cfg.seed, cfg.seed + args.seeds))
    return commands[args.command](cfg)


def _as_data_error(error: OSError) -> DataError:
    if error.filename is None:
        return DataError(str(error))
    return DataError(f"{error.strerror}: {error.filename}")


def _write_error(error: MrpError, out: Optional[str]) -> None:
    if out is None:
        return
    try:
        write_json(error.to_dict(), Path(out) / "error.json")
    except OSError as e:
        logger.error(f"Could not write error document: {e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the `mrpdesign` console script. Returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if args.verbose:
        logging.getLogger("mrpdesign").setLevel(logging.DEBUG)
    out: Optional[str] = args.out or DEFAULT_CONFIG["out"]
    try:
        cfg = resolve_config(args)
        out = cfg.out
        _run(args, cfg)
    except (MrpError, OSError) as e:
        error = e if isinstance(e, MrpError) else _as_data_error(e)
        logger.error(f"{type(error).__name__}: {error}")
        _write_error(error, out)
        return error.exit_code
    return EXIT_OK

