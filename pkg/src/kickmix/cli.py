"""Command line: ``kickmix run CONFIG`` and ``kickmix validate CONFIG``.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from kickmix import __version__
from kickmix.config import load_config
from kickmix.errors import BlowUpError, ConfigurationError, DomainError
from kickmix.experiments import OUTPUT_ENV, default_output_dir, run_experiment

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kickmix", description="Randomly kicked barotropic flow on the sphere.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run the experiment named in a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=_seed, help="override the config seed")
    run.add_argument("--out", help=f"output directory (default: config output_dir, then ${OUTPUT_ENV})")
    run.add_argument("--threads", type=_positive, default=1)
    val = sub.add_parser("validate", help="check a config file against the schema")
    val.add_argument("config")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "validate":
        print(f"ok: {cfg.experiment} config_hash={cfg.config_hash()}")
        return EXIT_PASS
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = default_output_dir(cfg, args.out)
    try:
        manifest = run_experiment(cfg, out, args.threads)
    except (ConfigurationError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as err:
        print(f"failed: solver blow-up at t={err.time}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    for name, ok in manifest["criteria"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"output: {out}")
    return EXIT_PASS if manifest["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
