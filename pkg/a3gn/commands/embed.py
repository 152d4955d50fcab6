"""``a3gn embed-train``: train and freeze the reference embedder."""

import argparse
import json
import logging
from typing import Dict

from a3gn.commands import add_common_arguments, add_data_arguments, load_dataset, resolve_settings
from a3gn.models import save_embedder, train_reference_embedder

logger = logging.getLogger(__name__)

EMBEDDER_FILE = "embedder.pt"
SUMMARY_FILE = "embedder_summary.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "embed-train", help="train the reference face embedder", allow_abbrev=False
    )
    add_common_arguments(parser)
    add_data_arguments(parser)
    parser.set_defaults(handler=cmd_embed_train)


def cmd_embed_train(args: argparse.Namespace, overrides: Dict[str, str]) -> int:
    settings = resolve_settings(args, overrides, synth=args.synth, data_dir=args.data_dir)
    dataset = load_dataset(settings)
    d2, summary = train_reference_embedder(dataset, settings.embedder_settings(), settings.dtype)

    path = save_embedder(args.out / EMBEDDER_FILE, d2, summary)
    text = json.dumps(summary.model_dump(mode="json"), indent=2)
    (args.out / SUMMARY_FILE).write_text(text, encoding="utf-8")
    print(text)
    logger.info(f"💾 Embedder written to {path}")
    return 0
