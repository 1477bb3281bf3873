"""Command-line front end.

Exit codes: 0 success, 2 configuration or parameter error, 3 numerical
failure. Failures print one JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys

from qubitline.config import EXPERIMENTS, validate_config
from qubitline.errors import ConfigError, ModelError, QubitLineError
from qubitline.experiments import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qubitline",
        description="Scattering and photon statistics of a two-level atom in an open "
                    "transmission line.")
    p.add_argument("--config", help="configuration file (default: the shipped default.conf)")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="named experiment to run")
    p.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, help="worker threads for sweep points")
    p.add_argument("--samples", type=float, help="record length per synthetic source")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set 'fig2c.powers=-132 dBm'")
    p.add_argument("--validate", action="store_true",
                   help="validate the configuration and print derived N and Rabi frequencies")
    return p


def _error(kind: str, message, code: int, **extra) -> int:
    record = {"status": "error", "exit_code": code, "error": kind}
    if isinstance(message, list):
        record["messages"] = message
        record["message"] = "; ".join(message)
    else:
        record["message"] = str(message)
    record.update(extra)
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            return _error("ConfigError", f"--set expects KEY=VALUE, got '{item}'", EXIT_CONFIG)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.samples is not None:
        overrides["samples"] = f"{args.samples:.0f}"

    try:
        cfg = validate_config(args.config, overrides)
    except ConfigError as exc:
        return _error("ConfigError", exc.errors, EXIT_CONFIG)

    if args.validate:
        report = {"status": "ok", "source": cfg.source, "power_offset_db": cfg.power_offset_db,
                  "sweep_points": cfg.echo(args.experiment)}
        print(json.dumps(report, indent=2, default=str))
        return EXIT_OK
    if args.experiment is None:
        return _error("ConfigError", "--experiment is required unless --validate is given",
                      EXIT_CONFIG)

    try:
        manifest = run_experiment(args.experiment, cfg, args.out_dir)
    except ConfigError as exc:
        return _error("ConfigError", exc.errors, EXIT_CONFIG, experiment=args.experiment)
    except ModelError as exc:
        return _error(type(exc).__name__, str(exc), EXIT_CONFIG, experiment=args.experiment)
    except (QubitLineError, ArithmeticError, FloatingPointError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_NUMERICAL, experiment=args.experiment)
    print(json.dumps({"status": "ok", "experiment": args.experiment,
                      "manifest": str(manifest)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
