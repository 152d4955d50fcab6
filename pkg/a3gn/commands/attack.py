"""``a3gn attack``: write an adversarial version of every probe image."""

import argparse
import csv
import logging
from pathlib import Path
from typing import Dict, List

import torch

from a3gn.commands import add_common_arguments, resolve_settings
from a3gn.data import IdentityDataset, TargetSet, load_images, make_target_set, quantize, save_images
from a3gn.errors import ConfigurationError
from a3gn.evaluation import AttackModel, cosine_similarity, ssim_rate
from a3gn.models import InstanceDiscriminator, load_embedder
from a3gn.training import load_attack_model

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.csv"
MANIFEST_COLUMNS = ("probe_path", "adv_path", "sim_before", "sim_after")


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "attack", help="generate adversarial faces for a probe set", allow_abbrev=False
    )
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", type=Path, required=True, help="ckpt_<iter> directory")
    parser.add_argument("--embedder", type=Path, required=True)
    parser.add_argument("--probe-dir", type=Path, required=True)
    parser.add_argument("--target-dir", type=Path, required=True)
    parser.set_defaults(handler=cmd_attack)


def adv_path(out_dir: Path, probes: IdentityDataset, index: int) -> Path:
    path = probes.paths[index] if probes.paths else None
    stem = path.stem if path is not None else f"{index:05d}"
    return out_dir / probes.name_of(index) / f"{stem}_adv.png"


def run_attack(
    model: AttackModel,
    d2: InstanceDiscriminator,
    probes: IdentityDataset,
    target: TargetSet,
    out_dir: Path,
    batch_size: int = 50,
    dtype: torch.dtype = torch.float32,
    canonical_index: int = 0,
) -> List[Dict[str, object]]:
    """Generate, quantize and save one ``_adv`` PNG per probe; returns manifest rows.

    The code is the ``A->A`` evaluation code (mean over every target image) and
    similarities are taken against the canonical target image, measured on
    the quantized images, i.e. on what is written.
    """
    if len(probes) == 0:
        raise ConfigurationError("probe set is empty")
    if not 0 <= canonical_index < target.count:
        raise ConfigurationError(f"canonical index {canonical_index} outside the target set")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        z = model.encode_target(target.images.to(dtype)).z
        canonical = target.images[canonical_index : canonical_index + 1]
        e_target = d2.embed(canonical.to(d2.dtype))

    rows: List[Dict[str, object]] = []
    originals, adversarials = [], []
    for start in range(0, len(probes), batch_size):
        indices = list(range(start, min(start + batch_size, len(probes))))
        x = probes.images[indices].to(dtype)
        with torch.no_grad():
            fake = quantize(model.generate(x, z))
            before = cosine_similarity(d2.embed(x.to(d2.dtype)), e_target)
            after = cosine_similarity(d2.embed(fake.to(d2.dtype)), e_target)
        paths = save_images(fake, [adv_path(out_dir, probes, i) for i in indices])
        for k, i in enumerate(indices):
            rows.append(
                {
                    "probe_path": str(probes.paths[i]) if probes.paths else "",
                    "adv_path": str(paths[k]),
                    "sim_before": float(before[k]),
                    "sim_after": float(after[k]),
                }
            )
        originals.append(x)
        adversarials.append(fake)

    with open(out_dir / MANIFEST_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    originals_all, adversarials_all = torch.cat(originals), torch.cat(adversarials)
    if min(originals_all.shape[2:]) >= 11:
        rate = ssim_rate(originals_all, adversarials_all)
        logger.info(f"🎯 {len(rows)} adversarial faces written, SSIM rate {rate:.3f}")
    return rows


def cmd_attack(args: argparse.Namespace, overrides: Dict[str, str]) -> int:
    settings = resolve_settings(args, overrides)
    model = load_attack_model(args.checkpoint)
    dtype = next(model.parameters()).dtype
    d2 = load_embedder(args.embedder, "white-box", dtype)
    probes = load_images(args.probe_dir, settings.image_size)
    target = make_target_set(
        load_images(args.target_dir, settings.image_size), 0, settings.target_count
    )
    run_attack(
        model, d2, probes, target, args.out, settings.eval_batch_size, dtype,
        settings.canonical_index,
    )
    return 0
