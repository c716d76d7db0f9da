"""Command line entry point.

    movilab run <config.json> [--jobs N] [--<field> VALUE ...]
    movilab emit <fig1|fig2|fig3> <records-dir> [--output PATH]
    movilab validate <config.json> [--<field> VALUE ...]

Any config field can be overridden with a flag named after it, nested
fields dot-separated (``--garnet.n_states 10``).  ``MOVILAB_OUTPUT_DIR``
overrides ``output_dir`` unless a ``--output_dir`` flag is given.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .experiments import (
    FIGURE_KIND,
    OUTPUT_DIR_ENV,
    ConfigError,
    emit_from_dir,
    run_experiment,
    validate_config,
)
from .mdp import ContractError

log = logging.getLogger("movilab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parse_overrides(tokens):
    overrides = {}
    errors = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or token == "--":
            errors.append(f"unexpected argument {token!r}")
            i += 1
            continue
        name = token[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        elif i + 1 < len(tokens):
            value = tokens[i + 1]
            i += 2
        else:
            errors.append(f"flag {token} needs a value")
            i += 1
            continue
        overrides[name.replace("-", "_")] = value
    if errors:
        raise ConfigError(errors)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="movilab", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")

    emit = sub.add_parser("emit", help="write figure data from a finished run")
    emit.add_argument("figure", choices=sorted(FIGURE_KIND))
    emit.add_argument("records_dir")
    emit.add_argument("--output", default=None)

    validate = sub.add_parser("validate", help="check a config and print it with defaults")
    validate.add_argument("config")
    return parser


def _load(args, extra):
    overrides = _parse_overrides(extra)
    if "output_dir" not in overrides and os.environ.get(OUTPUT_DIR_ENV):
        overrides["output_dir"] = os.environ[OUTPUT_DIR_ENV]
    return validate_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if extra and args.command == "emit":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        if args.command == "validate":
            config = _load(args, extra)
            sys.stdout.write(config.to_json())
            return EXIT_OK
        if args.command == "run":
            config = _load(args, extra)
            if args.jobs < 1:
                raise ConfigError(["--jobs: must be >= 1"])
            log.info("running %s experiment on %d Garnets", config.kind, config.n_mdps)
            written = run_experiment(config, jobs=args.jobs)
            for name in sorted(written):
                print(written[name])
            return EXIT_OK
        if args.command == "emit":
            print(emit_from_dir(args.figure, args.records_dir, args.output))
            return EXIT_OK
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
