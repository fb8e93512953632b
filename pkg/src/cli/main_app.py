"""
PackAudit - Command-line application
fleetgen / train / audit / eval / report / pipeline subcommands
"""

import argparse
import json
import os
import sys
from typing import List, Optional

from ..core.errors import ConfigInvalid, MissingArtifact, PackAuditError
from ..utils.log import get_logger, setup_logging
from ..utils.run_config import ENV_PREFIX, resolve_config
from .commands import COMMANDS

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_CONFIG_INVALID = 3
EXIT_PIPELINE_ERROR = 4

DESCRIPTIONS = {
    "fleetgen": "Generate a synthetic machine fleet (alarms.csv, work_orders.csv)",
    "train": "Train the baseline forest on the first half of every machine",
    "audit": "Stream-audit the classifier output on the second half",
    "eval": "Write report.csv and boxplot.csv from the audit traces",
    "report": "Write report.md (and boxplot.svg) from the audit traces",
    "pipeline": "Run every stage in order",
}


def _common_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset after it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--preset", default=argparse.SUPPRESS, help="Named preset (full, smoke, ...)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Master random seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="Worker processes (-1 = all cores)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="Output directory")
    common.add_argument("--machines", type=int, default=argparse.SUPPRESS, help="Fleet size for fleetgen")
    common.add_argument("--days", type=int, default=argparse.SUPPRESS, help="Days per machine for fleetgen")
    common.add_argument("--set", dest="assignments", action="append", default=argparse.SUPPRESS,
                        metavar="SECTION.KEY=VALUE", help="Override any config value (repeatable)")
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)
    common.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                        help="Print the resolved config and exit")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="packaudit",
        description="Audit a predictive-maintenance classifier with streaming anomaly detectors",
        parents=[common],
        epilog=f"Environment overrides: {ENV_PREFIX}SEED, {ENV_PREFIX}JOBS, {ENV_PREFIX}OUT, "
               f"{ENV_PREFIX}CONFIG, {ENV_PREFIX}LOG_LEVEL",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, help_text in DESCRIPTIONS.items():
        sub.add_parser(name, help=help_text, description=help_text, parents=[common])
    return parser


def _fail(error: BaseException, code: str, exit_code: int) -> int:
    message = str(getattr(error, "message", error)).replace('"', '\\"')
    print(f'ERROR code={code} message="{message}"', file=sys.stderr)
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, resolve the config and run one subcommand"""
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "log_level", None) or os.environ.get(ENV_PREFIX + "LOG_LEVEL") or "INFO")

    try:
        cfg = resolve_config(
            preset=getattr(args, "preset", None),
            config_path=getattr(args, "config", None),
            assignments=getattr(args, "assignments", None) or (),
            seed=getattr(args, "seed", None),
            jobs=getattr(args, "jobs", None),
            out=getattr(args, "out", None),
            machines=getattr(args, "machines", None),
            days=getattr(args, "days", None),
            log_level=getattr(args, "log_level", None),
        )
        setup_logging(cfg.log_level)

        if getattr(args, "dry_run", False):
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK

        logger.info("command started", command=args.command, out=cfg.paths.out, seed=cfg.seed, jobs=cfg.jobs)
        COMMANDS[args.command](cfg)
        logger.info("command finished", command=args.command)
        return EXIT_OK
    except MissingArtifact as e:
        return _fail(e, e.code, EXIT_MISSING_ARTIFACT)
    except ConfigInvalid as e:
        return _fail(e, e.code, EXIT_CONFIG_INVALID)
    except PackAuditError as e:
        return _fail(e, e.code, EXIT_PIPELINE_ERROR)
    except Exception as e:
        logger.error("unexpected failure", command=args.command, exc_info=True)
        return _fail(e, type(e).__name__, EXIT_UNEXPECTED)


if __name__ == "__main__":
    sys.exit(main())
