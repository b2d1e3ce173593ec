"""Command-line entry point: ``cfisac run | validate-config | list-experiments``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from importlib import resources
from pathlib import Path

from ..config import SimConfig, parse_config, read_config_file
from ..errors import ConfigError
from .experiments import KINDS, ExperimentSpec, TrialError, run_experiment, spec_from_mapping
from .results import emit_results

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

log = logging.getLogger("cfisac")


def bundled_config(kind: str) -> Path:
    """Path of the desk-scale config shipped for ``kind``."""
    return Path(str(resources.files("cfisac") / "configs" / f"{kind}.toml"))


def _check_tables(data: dict) -> dict:
    unknown = set(data) - {"system", "experiment"}
    if unknown:
        raise ConfigError(f"unknown top-level tables: {', '.join(sorted(unknown))}")
    return data


def load_run_config(path: str | Path, kind: str | None = None, **overrides) -> tuple[SimConfig, ExperimentSpec]:
    """System config and experiment spec from one file.

    The file holds a ``[system]`` table and an optional ``[experiment]`` table;
    keyword overrides (kind, seed, trials) win over the file.
    """
    data = _check_tables(read_config_file(path))
    config = parse_config(data.get("system", {}))
    spec = spec_from_mapping(data.get("experiment"), kind=kind, **overrides)
    return config, spec


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfisac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write CSV and JSON results")
    run.add_argument("--config", required=True, help="TOML or JSON file with [system] and [experiment]")
    run.add_argument("--experiment", required=True, choices=KINDS)
    run.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trials", type=int, default=None, help="Monte Carlo trials per sweep point")
    run.add_argument("--threads", type=int, default=None,
                     help="worker processes; the CFISAC_THREADS environment variable overrides it")

    check = sub.add_parser("validate-config", help="check a config file and print its digest")
    check.add_argument("--config", required=True)
    check.add_argument("--experiment", choices=KINDS, default=None)

    sub.add_parser("list-experiments", help="print the experiment kinds")
    return parser


def _run(args) -> int:
    config, spec = load_run_config(args.config, args.experiment, seed=args.seed, trials=args.trials)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    result = run_experiment(spec, config, threads=args.threads)
    result.meta["elapsed_s"] = round(time.perf_counter() - started, 3)
    csv_path = emit_results(result, out / f"{spec.kind}.csv", "csv")
    json_path = emit_results(result, out / f"{spec.kind}.json", "json")
    print(f"{spec.kind}: {len(result.records)} records, {result.meta['elapsed_s']} s")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return EXIT_OK


def _validate(args) -> int:
    data = read_config_file(args.config)
    kind = args.experiment or (data.get("experiment") or {}).get("kind")
    if kind is None:
        config = parse_config(_check_tables(data)["system"] if "system" in data else data)
        print(f"system config OK, digest {config.config_hash()}")
        return EXIT_OK
    config, spec = load_run_config(args.config, kind)
    print(f"config OK: {spec.kind}, {len(spec.points())} sweep points, {spec.trials} trials, "
          f"digest {config.config_hash()}")
    return EXIT_OK


def _list() -> int:
    for kind in KINDS:
        print(f"{kind}\t{bundled_config(kind)}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "validate-config":
            return _validate(args)
        return _list()
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except TrialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
