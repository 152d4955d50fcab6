"""``a3gn evaluate``: attack reports for white-box and optional black-box embedders."""

import argparse
import logging
from pathlib import Path
from typing import Dict

from a3gn.commands import add_common_arguments, resolve_settings
from a3gn.data import load_images, make_target_set
from a3gn.evaluation import report_stems, run_protocols, write_report
from a3gn.models import load_embedder
from a3gn.training import load_attack_model

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "evaluate", help="measure an attack checkpoint", allow_abbrev=False
    )
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--embedder", type=Path, required=True, help="white-box embedder")
    parser.add_argument(
        "--blackbox-embedder", type=Path, help="second embedder, queried for features only"
    )
    parser.add_argument("--probe-dir", type=Path, required=True)
    parser.add_argument("--target-dir", type=Path, required=True)
    parser.add_argument("--protocol", choices=["A->A", "A->A'", "both"])
    parser.set_defaults(handler=cmd_evaluate)


def cmd_evaluate(args: argparse.Namespace, overrides: Dict[str, str]) -> int:
    settings = resolve_settings(args, overrides, protocol=args.protocol)
    model = load_attack_model(args.checkpoint)
    dtype = next(model.parameters()).dtype
    embedders = [load_embedder(args.embedder, "white-box", dtype)]
    if args.blackbox_embedder is not None:
        embedders.append(load_embedder(args.blackbox_embedder, "black-box", dtype))

    probes = load_images(args.probe_dir, settings.image_size)
    target = make_target_set(
        load_images(args.target_dir, settings.image_size), 0, settings.target_count
    )
    reports = run_protocols(model, embedders, probes, target, settings.eval_settings())
    for report, stem in zip(reports, report_stems(reports)):
        json_path, _, _ = write_report(report, args.out, stem)
        logger.info(f"📄 {report.mode} {report.protocol}: map={report.map_score:.3f} -> {json_path}")
    return 0
