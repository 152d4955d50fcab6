"""Command-line entry point.

    a3gn embed-train --synth --out runs/embedder
    a3gn train --synth --embedder runs/embedder/embedder.pt --out runs/both
    a3gn attack --checkpoint runs/both/checkpoints/ckpt_005000 ...
    a3gn evaluate --checkpoint ... --blackbox-embedder other.pt --protocol both
    a3gn plot runs/*/report_*.json --out curves.png

Any further ``--key value`` pair overrides the setting of the same name.
Exit status: 0 on success, 2 for usage and configuration errors, 1 otherwise.
"""

import argparse
import logging
import sys
from typing import List, Optional

from a3gn.commands import attack, embed, evaluate, parse_overrides, plot, train
from a3gn.errors import A3GNError, ConfigurationError, RejectedInputError

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

COMMANDS = (embed, train, attack, evaluate, plot)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="a3gn", description="Attentional adversarial face generation"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and not getattr(args, "accepts_overrides", True):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")

    try:
        return args.handler(args, parse_overrides(extra))
    except (ConfigurationError, RejectedInputError) as exc:
        logger.error(f"❌ {exc}")
        return EXIT_USAGE
    except A3GNError as exc:
        logger.error(f"❌ {type(exc).__name__}: {exc}")
        return EXIT_FAILURE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
