"""
vcpcfg command-line entry point.

    vcpcfg [--config FILE] [--set key=value ...] <train|parse|evaluate|gradcheck|synth> ...

Exit status: 0 ok, 2 configuration error, 3 data error, 4 numeric or
contract failure, 1 anything else raised by the package.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from vcpcfg.command_registry import register_commands
from vcpcfg.errors import DataError, VcpcfgError
from vcpcfg.utils import settings
from vcpcfg.utils.config import load_run_config, parse_overrides
from vcpcfg.utils.logging_setup import configure_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for per-sentence work")
    common.add_argument("--log-level", default=settings.LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="vcpcfg", description="Visually grounded compound PCFG induction.")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="<command>")
    register_commands(subparsers, parents=[common])
    return parser


def run(args: argparse.Namespace) -> int:
    configure_logging(args.log_level)
    overrides = parse_overrides(args.overrides)
    if args.threads is not None:
        overrides["threads"] = args.threads
    config = load_run_config(args.config, overrides, defaults={"threads": settings.DEFAULT_THREADS})
    logger.debug("[CLI] %s with %s", args.command, config.model_dump(mode="json"))
    return args.handler(config, args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except VcpcfgError as e:
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(f"error: {e}\n")
        return DataError.exit_code
    except KeyboardInterrupt:
        sys.stderr.write("interrupted\n")
        return 130


if __name__ == "__main__":
    sys.exit(main())
