"""On-disk checkpoint store.

Layout under the store root:

    ckpt_000500/params.pt     networks, optimizer moments, RNG state, counters
    ckpt_000500/meta.json     CheckpointMeta
    ckpt_000500/trace.csv     loss trace up to this iteration
    diagnostic_000123/...     same files, written when a loss went non-finite
"""

import csv
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import torch

from a3gn.errors import ConfigurationError
from a3gn.records import TRACE_COLUMNS, CheckpointMeta, TracePoint

logger = logging.getLogger(__name__)

PARAMS_FILE = "params.pt"
META_FILE = "meta.json"
TRACE_FILE = "trace.csv"


@dataclass
class Checkpoint:
    """A loaded checkpoint directory."""

    path: Path
    payload: Dict[str, Any]
    meta: CheckpointMeta
    trace: List[TracePoint]


def write_trace(path: Path, trace: Sequence[TracePoint]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for point in trace:
            writer.writerow(point.row())
    return path


def read_trace(path: Path) -> List[TracePoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [TracePoint(**row) for row in csv.DictReader(fh)]


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read one checkpoint directory.

    Raises:
        ConfigurationError: not a checkpoint directory
    """
    path = Path(path)
    if not (path / PARAMS_FILE).is_file() or not (path / META_FILE).is_file():
        raise ConfigurationError(f"not a checkpoint directory: {path}")
    payload = torch.load(path / PARAMS_FILE, map_location="cpu", weights_only=True)
    meta = CheckpointMeta.model_validate_json((path / META_FILE).read_text(encoding="utf-8"))
    trace = read_trace(path / TRACE_FILE) if (path / TRACE_FILE).is_file() else []
    return Checkpoint(path=path, payload=payload, meta=meta, trace=trace)


class CheckpointStore:
    """Checkpoints keyed by training iteration.

    Usage:
        store = CheckpointStore(out_dir / "checkpoints")
        path = store.save(payload, meta, trace)
        latest = store.get(store.list()[-1])
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, iteration: int, prefix: str = "ckpt") -> Path:
        return self.root / f"{prefix}_{iteration:06d}"

    def save(
        self,
        payload: Dict[str, Any],
        meta: CheckpointMeta,
        trace: Sequence[TracePoint],
        prefix: str = "ckpt",
    ) -> Path:
        """Write (or overwrite) the checkpoint for ``meta.iteration``."""
        path = self.path_for(meta.iteration, prefix)
        path.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path / PARAMS_FILE)
        (path / META_FILE).write_text(meta.model_dump_json(indent=2), encoding="utf-8")
        write_trace(path / TRACE_FILE, trace)
        logger.info(f"💾 Saved {prefix} at iteration {meta.iteration}: {path}")
        return path

    def save_diagnostic(
        self, payload: Dict[str, Any], meta: CheckpointMeta, trace: Sequence[TracePoint]
    ) -> Path:
        return self.save(payload, meta, trace, prefix="diagnostic")

    def list(self) -> List[int]:
        """Iterations with a checkpoint, ascending."""
        iterations = []
        for path in self.root.glob("ckpt_*"):
            if (path / META_FILE).is_file():
                iterations.append(int(path.name.split("_", 1)[1]))
        return sorted(iterations)

    def get(self, iteration: int) -> Optional[Checkpoint]:
        if not self.exists(iteration):
            return None
        return load_checkpoint(self.path_for(iteration))

    def latest(self) -> Optional[Path]:
        iterations = self.list()
        return self.path_for(iterations[-1]) if iterations else None

    def exists(self, iteration: int) -> bool:
        return (self.path_for(iteration) / META_FILE).is_file()

    def count(self) -> int:
        return len(self.list())

    def delete(self, iteration: int) -> bool:
        if not self.exists(iteration):
            return False
        shutil.rmtree(self.path_for(iteration))
        return True
