"""Face datasets: directory loading, synthetic identities and evaluation pairing.

Images live in ``<root>/<identity>/<image>.{png,jpg}`` trees and are held as
``N x 3 x S x S`` tensors scaled to [-1, 1]. Generated images are written back
to the same layout as 8-bit PNG.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as TF

from a3gn.config import PairProtocol
from a3gn.errors import ConfigurationError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
MAX_SKIPPED_FRACTION = 0.1

# Synthetic identities: 14 geometry/tint parameters in [0, 1].
SYNTH_PARAMS = 14
SYNTH_JITTER = 0.02
SYNTH_MIN_SEPARATION = 0.35


@dataclass
class IdentityDataset:
    """Images with integer identity labels; ``identities[label]`` is the name."""

    images: Tensor
    labels: Tensor
    image_size: int
    identities: List[str]
    paths: List[Optional[Path]] = field(default_factory=list)
    identity_params: Optional[Tensor] = None
    jitter_scale: float = 0.0

    def __len__(self) -> int:
        return self.images.shape[0]

    def name_of(self, index: int) -> str:
        return self.identities[int(self.labels[index])]

    def indices_of(self, label: int) -> List[int]:
        return (self.labels == label).nonzero().flatten().tolist()

    def subset(self, indices: Sequence[int]) -> "IdentityDataset":
        indices = list(indices)
        paths = [self.paths[i] for i in indices] if self.paths else []
        return IdentityDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            image_size=self.image_size,
            identities=self.identities,
            paths=paths,
            identity_params=self.identity_params,
            jitter_scale=self.jitter_scale,
        )


@dataclass
class TargetSet:
    """The images of the identity being impersonated."""

    identity: int
    name: str
    images: Tensor

    @property
    def count(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class EvalPair:
    """A probe, the target faces whose mean code drives the attack, and the comparison face."""

    probe: Tensor
    encode_images: Tensor
    target_image: Tensor
    probe_index: int
    probe_name: str
    protocol: str


def _to_tensor(img: Image.Image, image_size: int) -> Tensor:
    img = img.convert("RGB")
    side = min(img.size)
    if img.size != (side, side):
        img = TF.center_crop(img, [side, side])
    if side != image_size:
        img = TF.resize(
            img, [image_size, image_size], interpolation=InterpolationMode.BICUBIC, antialias=True
        )
    return TF.pil_to_tensor(img).to(torch.float64) / 127.5 - 1.0


def load_images(root: Path, image_size: int) -> IdentityDataset:
    """Load ``<root>/<identity>/*`` in lexicographic order, center-cropped and resized.

    Raises:
        ConfigurationError: missing or empty directory, or more than 10% of the
            files could not be decoded
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"image directory not found: {root}")
    files = [
        (identity_dir.name, path)
        for identity_dir in sorted(p for p in root.iterdir() if p.is_dir())
        for path in sorted(identity_dir.iterdir())
        if path.suffix.lower() in IMAGE_SUFFIXES
    ]
    if not files:
        raise ConfigurationError(f"no images under {root}")

    images, names, paths = [], [], []
    skipped = 0
    for name, path in files:
        try:
            with Image.open(path) as img:
                images.append(_to_tensor(img, image_size))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            logger.warning(f"⚠️ Skipping unreadable image {path}: {exc}")
            skipped += 1
            continue
        names.append(name)
        paths.append(path)
    if skipped > MAX_SKIPPED_FRACTION * len(files):
        raise ConfigurationError(f"{skipped} of {len(files)} images under {root} are unreadable")

    identities = sorted(set(names))
    label_of = {name: i for i, name in enumerate(identities)}
    logger.info(f"Loaded {len(images)} images of {len(identities)} identities from {root}")
    return IdentityDataset(
        images=torch.stack(images),
        labels=torch.tensor([label_of[n] for n in names], dtype=torch.long),
        image_size=image_size,
        identities=identities,
        paths=paths,
    )


def quantize(images: Tensor) -> Tensor:
    """Snap [-1, 1] values onto the 8-bit grid used for PNG output."""
    levels = ((images.clamp(-1.0, 1.0) + 1.0) * 127.5).round()
    return levels / 127.5 - 1.0


def save_images(images: Tensor, paths: Sequence[Path]) -> List[Path]:
    """Write each ``3 x S x S`` image as an 8-bit PNG."""
    if len(paths) != images.shape[0]:
        raise ConfigurationError(f"{images.shape[0]} images but {len(paths)} output paths")
    written = []
    for image, path in zip(images, paths):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        levels = ((image.detach().cpu().double().clamp(-1, 1) + 1.0) * 127.5).round()
        TF.to_pil_image(levels.to(torch.uint8)).save(path, format="PNG")
        written.append(path)
    return written


def _draw_identity_params(
    generator: torch.Generator, n_identities: int, min_separation: float, max_attempts: int = 10000
) -> Tensor:
    accepted: List[Tensor] = []
    for _ in range(max_attempts):
        candidate = torch.rand(SYNTH_PARAMS, generator=generator, dtype=torch.float64)
        if all(torch.dist(candidate, other) >= min_separation for other in accepted):
            accepted.append(candidate)
            if len(accepted) == n_identities:
                return torch.stack(accepted)
    raise ConfigurationError(
        f"could not place {n_identities} identities {min_separation} apart in parameter space"
    )


def _ellipse(u: Tensor, v: Tensor, cx: float, cy: float, ax: float, ay: float, sharp: float):
    r = torch.sqrt(((u - cx) / ax) ** 2 + ((v - cy) / ay) ** 2)
    return torch.sigmoid((1.0 - r) * min(ax, ay) * sharp)


def _render_face(p: Tensor, pose: Tensor, size: int) -> Tensor:
    """Draw one face from parameters ``p`` under pose ``(dx, dy, angle, brightness)``."""
    dx, dy, angle, brightness = pose.tolist()
    sharp = size / 2.0
    coords = torch.linspace(-1.0, 1.0, size, dtype=torch.float64)
    v, u = torch.meshgrid(coords, coords, indexing="ij")
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    u, v = cos_a * (u - dx) + sin_a * (v - dy), -sin_a * (u - dx) + cos_a * (v - dy)

    face_ax, face_ay = 0.5 + 0.3 * p[0].item(), 0.65 + 0.25 * p[1].item()
    eye_dx, eye_r = 0.18 + 0.22 * p[2].item(), 0.06 + 0.08 * p[3].item()
    nose_len = 0.1 + 0.25 * p[4].item()
    mouth_w, mouth_curve = 0.15 + 0.3 * p[5].item(), -0.2 + 0.4 * p[6].item()
    skin = (0.35 + 0.6 * p[7:10]).view(3, 1, 1)
    eye_y = -0.15 - 0.2 * p[10].item()
    hair = (0.05 + 0.6 * p[11:14]).view(3, 1, 1)
    mouth_y = 0.4 * face_ay

    canvas = torch.full((3, size, size), 0.5, dtype=torch.float64)

    def paint(mask: Tensor, color: Tensor) -> None:
        canvas.mul_(1 - mask).add_(mask * color)

    paint(_ellipse(u, v, 0.0, -0.15, face_ax * 1.12, face_ay * 0.95, sharp), hair)
    paint(_ellipse(u, v, 0.0, 0.05, face_ax, face_ay * 0.9, sharp), skin)
    eye_color = torch.tensor([0.1, 0.1, 0.15], dtype=torch.float64).view(3, 1, 1)
    for side in (-1.0, 1.0):
        dist = torch.sqrt((u - side * eye_dx) ** 2 + (v - eye_y) ** 2)
        paint(torch.sigmoid((eye_r - dist) * sharp), eye_color)

    top = eye_y + 0.05
    along = (v - top).clamp(0.0, nose_len)
    nose_dist = torch.sqrt(u**2 + (v - top - along) ** 2)
    paint(torch.sigmoid((0.05 - nose_dist) * sharp), skin * 0.75)

    curve_v = mouth_y - mouth_curve * (1 - (u / mouth_w) ** 2)
    mouth = torch.sigmoid((0.045 - (v - curve_v).abs()) * sharp) * torch.sigmoid(
        (mouth_w - u.abs()) * sharp
    )
    paint(mouth, torch.tensor([0.6, 0.15, 0.2], dtype=torch.float64).view(3, 1, 1))

    return (canvas + brightness) * 2.0 - 1.0


def synth_faces(
    seed: int,
    n_identities: int,
    per_identity: int,
    image_size: int,
    jitter_scale: float = SYNTH_JITTER,
    min_separation: float = SYNTH_MIN_SEPARATION,
) -> IdentityDataset:
    """Parametric face-like images, bit-identical for equal arguments.

    Each identity has fixed geometry and tint parameters; every image adds
    parameter jitter, a small shift and rotation, a brightness offset and
    pixel noise.
    """
    if n_identities < 2:
        raise ConfigurationError(f"synthetic data needs at least 2 identities, got {n_identities}")
    if min_separation <= 3 * jitter_scale:
        raise ConfigurationError("identity separation must exceed 3x the jitter scale")
    generator = torch.Generator().manual_seed(seed)
    params = _draw_identity_params(generator, n_identities, min_separation)

    images, labels = [], []
    for label in range(n_identities):
        for _ in range(per_identity):
            jitter = jitter_scale * torch.randn(SYNTH_PARAMS, generator=generator, dtype=torch.float64)
            geometry = (params[label] + jitter).clamp(0.0, 1.0)
            uniform = torch.rand(4, generator=generator, dtype=torch.float64) * 2 - 1
            pose = uniform * torch.tensor([0.06, 0.06, 0.12, 0.08], dtype=torch.float64)
            noise = 0.06 * torch.randn(
                (3, image_size, image_size), generator=generator, dtype=torch.float64
            )
            images.append((_render_face(geometry, pose, image_size) + noise).clamp(-1.0, 1.0))
            labels.append(label)

    return IdentityDataset(
        images=torch.stack(images),
        labels=torch.tensor(labels, dtype=torch.long),
        image_size=image_size,
        identities=[f"id{label:03d}" for label in range(n_identities)],
        identity_params=params,
        jitter_scale=jitter_scale,
    )


def split_holdout(
    dataset: IdentityDataset, per_identity: int, exclude: Iterable[str] = ()
) -> Tuple[IdentityDataset, IdentityDataset]:
    """Hold out the last ``per_identity`` images of every identity.

    Identities named in ``exclude`` appear in neither part.
    """
    excluded = set(exclude)
    train_idx, holdout_idx = [], []
    for label, name in enumerate(dataset.identities):
        if name in excluded:
            continue
        indices = dataset.indices_of(label)
        n_hold = min(per_identity, len(indices))
        train_idx += indices[: len(indices) - n_hold]
        holdout_idx += indices[len(indices) - n_hold :]
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(holdout_idx))


def make_target_set(dataset: IdentityDataset, identity: int, count: int = 7) -> TargetSet:
    """First ``count`` images of one identity."""
    if not 0 <= identity < len(dataset.identities):
        raise ConfigurationError(f"target identity {identity} not in dataset")
    indices = dataset.indices_of(identity)
    if not indices:
        raise ConfigurationError(f"identity {dataset.identities[identity]} has no images")
    if len(indices) < count:
        logger.warning(f"target identity has {len(indices)} images, fewer than {count}")
    return TargetSet(
        identity=identity,
        name=dataset.identities[identity],
        images=dataset.images[indices[:count]],
    )


def make_eval_pairs(
    probe_set: IdentityDataset,
    target: TargetSet,
    protocol: PairProtocol = "A->A",
    exclude_target: bool = True,
    canonical_index: int = 0,
    limit: Optional[int] = None,
) -> List[EvalPair]:
    """Pair every probe with the target, in probe order.

    The attack code is the inference code of ``encode_images``: the mean of
    their per-image codes. Under ``A->A`` every target image is encoded and
    the canonical image is the comparison face. Under ``A->A'`` the comparison
    face is the next target image and is left out of the encoded images.
    """
    if not 0 <= canonical_index < target.count:
        raise ConfigurationError(f"canonical index {canonical_index} outside the target set")
    if protocol == "A->A":
        encode_images = target.images
        compare_image = target.images[canonical_index]
    elif protocol == "A->A'":
        compare_index = (canonical_index + 1) % target.count
        compare_image = target.images[compare_index]
        if target.count == 1:
            logger.warning("A->A' with a single target image compares against the same image")
            encode_images = target.images
        else:
            keep = [i for i in range(target.count) if i != compare_index]
            encode_images = target.images[keep]
    else:
        raise ConfigurationError(f"unknown pairing protocol: {protocol}")

    pairs = []
    for i in range(len(probe_set)):
        name = probe_set.name_of(i)
        if exclude_target and name == target.name:
            continue
        pairs.append(EvalPair(probe_set.images[i], encode_images, compare_image, i, name, protocol))
        if limit is not None and len(pairs) == limit:
            break
    if not pairs:
        raise ConfigurationError("probe set is empty")
    return pairs
