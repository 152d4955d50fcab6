"""Subcommands of the ``a3gn`` CLI and the helpers they share."""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from a3gn.config import Settings, config_hash, echo_settings, load_settings
from a3gn.data import IdentityDataset, load_images, synth_faces
from a3gn.errors import ConfigurationError

logger = logging.getLogger(__name__)


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")


def add_data_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", type=Path, help="<root>/<identity>/<image> tree")
    parser.add_argument(
        "--synth", action="store_true", default=None, help="use the synthetic face generator"
    )


def parse_overrides(tokens: List[str]) -> Dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into setting overrides.

    A key with no value is read as ``true``.
    """
    overrides: Dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigurationError(f"unexpected argument: {token}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            key, value = token[2:], tokens[i + 1]
            i += 2
        else:
            key, value = token[2:], "true"
            i += 1
        overrides[key] = value
    return overrides


def resolve_settings(
    args: argparse.Namespace, overrides: Dict[str, Any], **explicit: Any
) -> Settings:
    """Settings from ``--config`` plus overrides, echoed into the output directory."""
    values = dict(overrides)
    values.update({k: v for k, v in explicit.items() if v is not None})
    settings = load_settings(args.config, values)
    logging.getLogger().setLevel(settings.log_level.upper())
    echo_settings(settings, args.out)
    logger.info(f"⚙️ Resolved settings (hash {config_hash(settings)[:12]}) -> {args.out}/config.env")
    return settings


def load_dataset(settings: Settings, data_dir: Optional[Path] = None) -> IdentityDataset:
    """Directory dataset if one is given, else the synthetic preset.

    Raises:
        ConfigurationError: neither a data directory nor ``synth`` was given
    """
    root = data_dir or settings.data_dir
    if root is not None:
        return load_images(root, settings.image_size)
    if settings.synth:
        return synth_faces(
            settings.seed,
            settings.synth_identities,
            settings.synth_per_identity,
            settings.image_size,
        )
    raise ConfigurationError("no dataset: pass --data-dir or --synth")
