"""``a3gn train``: train the attack networks against a frozen embedder."""

import argparse
import logging
import shutil
from pathlib import Path
from typing import Dict

from a3gn.commands import add_common_arguments, add_data_arguments, load_dataset, resolve_settings
from a3gn.data import (
    IdentityDataset,
    TargetSet,
    load_images,
    make_eval_pairs,
    make_target_set,
    save_images,
    split_holdout,
)
from a3gn.errors import ConfigurationError
from a3gn.models import load_embedder
from a3gn.store import TRACE_FILE, CheckpointStore
from a3gn.training import train

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train the attack networks", allow_abbrev=False)
    add_common_arguments(parser)
    add_data_arguments(parser)
    parser.add_argument("--embedder", type=Path, required=True, help="embedder.pt from embed-train")
    parser.add_argument("--target-dir", type=Path, help="images of the target identity")
    parser.add_argument("--resume", type=Path, help="checkpoint directory to continue from")
    parser.add_argument("--geometric-attention", action=argparse.BooleanOptionalAction)
    parser.add_argument("--channel-attention", action=argparse.BooleanOptionalAction)
    parser.set_defaults(handler=cmd_train)


def _persist_sets(out: Path, target: TargetSet, probes: IdentityDataset) -> None:
    """Write the target and probe images so attack/evaluate can reuse them."""
    save_images(
        target.images,
        [out / "targets" / target.name / f"target_{i:02d}.png" for i in range(target.count)],
    )
    save_images(
        probes.images,
        [out / "probes" / probes.name_of(i) / f"probe_{i:04d}.png" for i in range(len(probes))],
    )


def cmd_train(args: argparse.Namespace, overrides: Dict[str, str]) -> int:
    settings = resolve_settings(
        args,
        overrides,
        synth=args.synth,
        data_dir=args.data_dir,
        geometric_attention=args.geometric_attention,
        channel_attention=args.channel_attention,
    )
    if not args.embedder.is_file():
        raise ConfigurationError(f"embedder file not found: {args.embedder}")
    d2 = load_embedder(args.embedder, "white-box", settings.dtype)
    dataset = load_dataset(settings)

    if args.target_dir is not None:
        target = make_target_set(
            load_images(args.target_dir, settings.image_size), 0, settings.target_count
        )
    else:
        target = make_target_set(dataset, settings.target_identity, settings.target_count)
    train_set, probe_set = split_holdout(
        dataset, settings.holdout_per_identity, exclude=[target.name]
    )
    _persist_sets(args.out, target, probe_set)

    eval_cfg = settings.eval_settings()
    pairs = make_eval_pairs(
        probe_set,
        target,
        "A->A",
        exclude_target=eval_cfg.exclude_target,
        canonical_index=eval_cfg.canonical_index,
        limit=settings.probe_count,
    )
    paths = train(
        settings.train_settings(),
        train_set,
        target,
        d2,
        CheckpointStore(args.out / "checkpoints"),
        settings.network_settings(),
        dtype=settings.dtype,
        probes=pairs,
        eval_cfg=eval_cfg,
        resume_from=args.resume,
        settings=settings,
    )
    final = paths[-1]
    shutil.copyfile(final / TRACE_FILE, args.out / TRACE_FILE)
    logger.info(f"✅ Final checkpoint: {final}")
    return 0
