"""Attack metrics and reports.

A generated face counts as the target when the cosine similarity of its
embedding to the target embedding is at least the match threshold (0.45).
``map`` is the mean of that match accuracy over the 101 thresholds
0.00, 0.01, ..., 1.00. It is not detection-style mean average precision.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
from torch import Tensor
from torch.nn import functional as F

from a3gn.config import EvalConfig
from a3gn.data import IdentityDataset, TargetSet, make_eval_pairs
from a3gn.errors import A3GNError, DegenerateEmbeddingError, RejectedInputError, ReportParseError
from a3gn.losses import cosine_similarity
from a3gn.models.embedder import InstanceDiscriminator
from a3gn.models.networks import LatentCode
from a3gn.records import CURVE_POINTS, THRESHOLDS, AttackReport

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

PROTOCOL_SLUGS = {"A->A": "AA", "A->A'": "AAprime"}

__all__ = [
    "AttackModel",
    "accuracy_at",
    "aggregate_reports",
    "cosine_similarity",
    "evaluate_attack",
    "fool_rate",
    "load_report",
    "map_over_thresholds",
    "read_curve_csv",
    "report_stems",
    "run_protocols",
    "ssim",
    "ssim_rate",
    "ssim_values",
    "threshold_curve",
    "write_report",
]


class AttackModel(Protocol):
    """What evaluation needs from a generator stack."""

    def encode(self, images: Tensor) -> Tensor: ...

    def encode_target(self, targets: Tensor) -> LatentCode: ...

    def generate(self, x: Tensor, z: Tensor) -> Tensor: ...


def _scores(scores: Union[Sequence[float], np.ndarray, Tensor]) -> np.ndarray:
    if isinstance(scores, Tensor):
        scores = scores.detach().cpu().numpy()
    values = np.asarray(scores, dtype=np.float64).ravel()
    if values.size == 0:
        raise RejectedInputError("scores must be non-empty")
    return values


def accuracy_at(scores, t: float) -> float:
    """Fraction of scores at or above ``t``."""
    values = _scores(scores)
    return np.count_nonzero(values >= t) / values.size


def threshold_curve(scores) -> List[Tuple[float, float]]:
    values = _scores(scores)
    return [(t, accuracy_at(values, t)) for t in THRESHOLDS]


def map_over_thresholds(scores) -> float:
    curve = threshold_curve(scores)
    return math.fsum(acc for _, acc in curve) / len(curve)


def _gaussian_window(dtype: torch.dtype) -> Tensor:
    coords = torch.arange(SSIM_WINDOW, dtype=torch.float64) - SSIM_WINDOW // 2
    g = torch.exp(-(coords**2) / (2 * SSIM_SIGMA**2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim_values(a: Tensor, b: Tensor) -> Tensor:
    """Per-image SSIM of two ``N x C x H x W`` batches in [-1, 1].

    Images are mapped to [0, 1]; the Gaussian-weighted statistics are taken
    over valid windows only and averaged over channels and positions.
    """
    if a.shape != b.shape:
        raise RejectedInputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() != 4:
        raise RejectedInputError(f"expected N x C x H x W, got {tuple(a.shape)}")
    if min(a.shape[2:]) < SSIM_WINDOW:
        raise RejectedInputError(f"images must be at least {SSIM_WINDOW} pixels on a side")
    x = (a.detach() + 1) / 2
    y = (b.detach() + 1) / 2
    channels = x.shape[1]
    window = _gaussian_window(x.dtype).to(x.device).expand(channels, 1, -1, -1)

    def filt(t: Tensor) -> Tensor:
        return F.conv2d(t, window, groups=channels)

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return (num / den).mean(dim=(1, 2, 3))


def ssim(a: Tensor, b: Tensor) -> float:
    """SSIM of two ``C x H x W`` images in [-1, 1]."""
    if a.shape != b.shape:
        raise RejectedInputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return float(ssim_values(a.unsqueeze(0), b.unsqueeze(0))[0])


def ssim_rate(originals: Tensor, adversarials: Tensor, threshold: float = 0.9) -> float:
    """Fraction of (original, adversarial) pairs with SSIM at or above ``threshold``."""
    if originals.shape[0] == 0:
        raise RejectedInputError("no image pairs")
    return accuracy_at(ssim_values(originals, adversarials), threshold)


def fool_rate(real_embs: Tensor, fake_embs: Tensor, t: float = 0.45) -> float:
    """Fraction of images whose adversarial version falls below ``t`` similarity."""
    if real_embs.shape[0] != fake_embs.shape[0]:
        raise RejectedInputError(
            f"{real_embs.shape[0]} real but {fake_embs.shape[0]} fake embeddings"
        )
    if real_embs.shape[0] == 0:
        raise RejectedInputError("no embeddings")
    sims = cosine_similarity(real_embs, fake_embs)
    return int((sims < t).sum()) / sims.shape[0]


def _embed(d2: InstanceDiscriminator, images: Tensor) -> Tensor:
    return d2.embed(images.to(d2.dtype))


def evaluate_attack(
    model: AttackModel,
    d2: InstanceDiscriminator,
    pairs,
    cfg: Optional[EvalConfig] = None,
    variant: Optional[str] = None,
) -> AttackReport:
    """Run the attack on every pair and compute the full report.

    Raises:
        RejectedInputError: no pairs, or pairs from mixed protocols
        DegenerateEmbeddingError: zero-norm or constant embeddings, with the probe index
    """
    cfg = cfg or EvalConfig()
    if not pairs:
        raise RejectedInputError("no evaluation pairs")
    protocols = {pair.protocol for pair in pairs}
    if len(protocols) != 1:
        raise RejectedInputError(f"pairs mix protocols: {sorted(protocols)}")
    dtype = pairs[0].probe.dtype
    if isinstance(model, torch.nn.Module):
        model.eval()
        dtype = next(model.parameters()).dtype
    if variant is None:
        variant = getattr(model, "variant", "custom")

    codes: Dict[int, Tensor] = {}
    with torch.no_grad():
        for pair in pairs:
            key = id(pair.encode_images)
            if key not in codes:
                codes[key] = model.encode_target(pair.encode_images.to(dtype)).z

    before, after, real_fake, ssims = [], [], [], []
    real_embs, fake_embs = [], []
    for start in range(0, len(pairs), cfg.batch_size):
        chunk = pairs[start : start + cfg.batch_size]
        try:
            with torch.no_grad():
                x = torch.stack([p.probe for p in chunk]).to(dtype)
                z = torch.cat([codes[id(p.encode_images)] for p in chunk])
                fake = model.generate(x, z)
                e_real = _embed(d2, x)
                e_fake = _embed(d2, fake)
                e_target = _embed(d2, torch.stack([p.target_image for p in chunk]))
                before.append(cosine_similarity(e_real, e_target))
                after.append(cosine_similarity(e_fake, e_target))
                real_fake.append(cosine_similarity(e_real, e_fake))
                ssims.append(ssim_values(x, fake))
        except DegenerateEmbeddingError as exc:
            row = start + (exc.index or 0)
            raise DegenerateEmbeddingError(
                f"probe {chunk[exc.index or 0].probe_index}: {exc}", index=row
            ) from exc
        except A3GNError as exc:
            exc.add_note(f"while evaluating probes {start}..{start + len(chunk) - 1}")
            raise
        real_embs.append(e_real)
        fake_embs.append(e_fake)

    real_all = torch.cat(real_embs)
    if real_all.shape[0] > 1 and bool((real_all == real_all[0]).all()):
        raise DegenerateEmbeddingError("embedder returns the same vector for every probe", index=0)

    sim_before = torch.cat(before).double().cpu().numpy()
    sim_after = torch.cat(after).double().cpu().numpy()
    sim_rf = torch.cat(real_fake).double().cpu().numpy()
    mean_before = math.fsum(sim_before) / sim_before.size
    mean_after = math.fsum(sim_after) / sim_after.size
    t = cfg.match_threshold
    report = AttackReport(
        real_acc=accuracy_at(sim_before, t),
        fake_acc=accuracy_at(sim_after, t),
        map=map_over_thresholds(sim_after),
        sim_before=mean_before,
        sim_after=mean_after,
        sim_delta=mean_after - mean_before,
        sim_real_fake=math.fsum(sim_rf) / sim_rf.size,
        ssim_rate=accuracy_at(torch.cat(ssims), cfg.ssim_threshold),
        fool_rate=fool_rate(real_all, torch.cat(fake_embs), t),
        threshold_curve=threshold_curve(sim_after),
        n_probes=len(pairs),
        mode=d2.mode,
        protocol=protocols.pop(),
        variant=variant,
        embedder=d2.name,
    )
    logger.info(
        f"📊 {report.mode} {report.protocol} ({report.n_probes} probes): "
        f"real_acc={report.real_acc:.3f} fake_acc={report.fake_acc:.3f} "
        f"map={report.map_score:.3f} sim_delta={report.sim_delta:.3f}"
    )
    return report


def run_protocols(
    model: AttackModel,
    embedders: Sequence[InstanceDiscriminator],
    probe_set: IdentityDataset,
    target: TargetSet,
    cfg: EvalConfig,
    variant: Optional[str] = None,
) -> List[AttackReport]:
    """One report per (pairing protocol, embedder)."""
    reports = []
    for protocol in cfg.protocols:
        pairs = make_eval_pairs(
            probe_set,
            target,
            protocol,
            exclude_target=cfg.exclude_target,
            canonical_index=cfg.canonical_index,
            limit=cfg.probe_count,
        )
        for d2 in embedders:
            reports.append(evaluate_attack(model, d2, pairs, cfg, variant))
    return reports


def aggregate_reports(reports: Sequence[AttackReport]) -> AttackReport:
    """Field-wise mean of reports for several target identities."""
    if not reports:
        raise RejectedInputError("no reports to aggregate")
    modes = {r.mode for r in reports}
    protocols = {r.protocol for r in reports}
    if len(modes) != 1 or len(protocols) != 1:
        raise RejectedInputError("reports differ in mode or protocol")
    n = len(reports)

    def mean(field_name: str) -> float:
        return math.fsum(getattr(r, field_name) for r in reports) / n

    curve = [
        (t, math.fsum(r.threshold_curve[i][1] for r in reports) / n)
        for i, t in enumerate(THRESHOLDS)
    ]
    sim_before, sim_after = mean("sim_before"), mean("sim_after")
    variants = {r.variant for r in reports}
    embedders = {r.embedder for r in reports}
    return AttackReport(
        real_acc=mean("real_acc"),
        fake_acc=mean("fake_acc"),
        map=mean("map_score"),
        sim_before=sim_before,
        sim_after=sim_after,
        sim_delta=sim_after - sim_before,
        sim_real_fake=mean("sim_real_fake"),
        ssim_rate=mean("ssim_rate"),
        fool_rate=mean("fool_rate"),
        threshold_curve=curve,
        n_probes=sum(r.n_probes for r in reports),
        mode=modes.pop(),
        protocol=protocols.pop(),
        variant=variants.pop() if len(variants) == 1 else "mixed",
        embedder=embedders.pop() if len(embedders) == 1 else "mixed",
    )


def write_report(report: AttackReport, out_dir: Path, stem: str) -> Tuple[Path, Path, Path]:
    """Write ``<stem>.json``, ``<stem>.csv`` (one row) and ``<stem>_curve.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flat = report.to_flat_dict()

    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(flat, indent=2), encoding="utf-8")

    row_path = out_dir / f"{stem}.csv"
    with open(row_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(flat))
        writer.writeheader()
        writer.writerow(flat)

    curve_path = out_dir / f"{stem}_curve.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "accuracy"])
        writer.writerows(report.threshold_curve)
    return json_path, row_path, curve_path


def read_curve_csv(path: Path) -> List[Tuple[float, float]]:
    """Parse a ``threshold,accuracy`` curve file.

    Raises:
        ReportParseError: missing file, wrong header, unparsable row or wrong length
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ReportParseError(path, str(exc)) from exc
    if not rows or [c.strip() for c in rows[0]] != ["threshold", "accuracy"]:
        raise ReportParseError(path, "expected header 'threshold,accuracy'")
    curve = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ReportParseError(path, f"line {number}: expected 2 columns")
        try:
            curve.append((float(row[0]), float(row[1])))
        except ValueError as exc:
            raise ReportParseError(path, f"line {number}: {exc}") from exc
    if len(curve) != CURVE_POINTS:
        raise ReportParseError(path, f"expected {CURVE_POINTS} points, got {len(curve)}")
    return curve


def load_report(json_path: Path) -> AttackReport:
    """Read a report written by :func:`write_report` (JSON plus its curve file)."""
    json_path = Path(json_path)
    try:
        flat = json.loads(json_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportParseError(json_path, str(exc)) from exc
    curve = read_curve_csv(json_path.with_name(f"{json_path.stem}_curve.csv"))
    try:
        return AttackReport(**flat, threshold_curve=curve)
    except ValueError as exc:
        raise ReportParseError(json_path, str(exc)) from exc


def report_stems(reports: Iterable[AttackReport]) -> List[str]:
    """File stems like ``report_white-box_AA`` or ``report_black-box_AAprime``."""
    return [f"report_{r.embedder}_{PROTOCOL_SLUGS[r.protocol]}" for r in reports]
