"""Frozen instance discriminator D2 and the reference embedder behind it.

The embedder is a small conv net trained with softmax cross-entropy over
identities; its penultimate features are the face embedding. Once wrapped in
an :class:`InstanceDiscriminator` its weights never change again.
"""

import logging
from itertools import combinations
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np
import torch
from sklearn.metrics import roc_curve
from torch import Tensor, nn
from torch.nn import functional as F

from a3gn.config import EmbedderConfig
from a3gn.errors import ConfigurationError, ModeViolationError
from a3gn.models.networks import state_digest
from a3gn.nn_core import Conv2d, init_weights
from a3gn.records import EmbedderSummary

logger = logging.getLogger(__name__)

AccessMode = Literal["white-box", "black-box"]


class EmbeddingNet(nn.Module):
    """Conv feature extractor with an identity classifier on top."""

    def __init__(self, config: EmbedderConfig, n_classes: int):
        super().__init__()
        layers = []
        c_in, pad = 3, config.kernel_size // 2
        for i in range(config.depth):
            c_out = config.width * 2**i
            layers += [
                Conv2d(c_in, c_out, config.kernel_size, padding=pad),
                nn.LeakyReLU(0.2),
                Conv2d(c_out, c_out, 3, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.embedding = nn.Linear(c_in * 16, config.embedding_dim)
        self.classifier = nn.Linear(config.embedding_dim, n_classes)

    def embed(self, x: Tensor) -> Tensor:
        return self.embedding(self.pool(self.features(x)).flatten(1))

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(self.embed(x))


class InstanceDiscriminator:
    """Frozen embedder queried as the third player.

    In ``white-box`` mode embeddings can be differentiated with respect to the
    input; in ``black-box`` mode only features are returned.
    """

    def __init__(
        self,
        net: EmbeddingNet,
        config: EmbedderConfig,
        n_classes: int,
        mode: AccessMode = "white-box",
        name: str = "d2",
    ):
        if mode not in ("white-box", "black-box"):
            raise ConfigurationError(f"unknown embedder access mode: {mode}")
        net.eval()
        for param in net.parameters():
            param.requires_grad_(False)
        self.net = net
        self.config = config
        self.n_classes = n_classes
        self.mode = mode
        self.name = name

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def embed(self, x: Tensor, differentiable: bool = False) -> Tensor:
        """``N x d`` embeddings of ``N x 3 x H x W`` faces."""
        if differentiable:
            if self.mode == "black-box":
                raise ModeViolationError(f"embedder '{self.name}' is black-box; no gradients")
            return self.net.embed(x)
        with torch.no_grad():
            return self.net.embed(x)

    def with_mode(self, mode: AccessMode, name: Optional[str] = None) -> "InstanceDiscriminator":
        return InstanceDiscriminator(self.net, self.config, self.n_classes, mode, name or self.name)

    def digest(self) -> str:
        return state_digest(self.net)


def _split_per_identity(labels: Tensor, fraction: float) -> Tuple[list, list]:
    train_idx, holdout_idx = [], []
    for label in sorted(set(labels.tolist())):
        indices = (labels == label).nonzero().flatten().tolist()
        if len(indices) < 2:
            raise ConfigurationError(f"identity {label} needs at least 2 images, has {len(indices)}")
        n_hold = min(max(1, round(fraction * len(indices))), len(indices) - 1)
        train_idx += indices[:-n_hold]
        holdout_idx += indices[-n_hold:]
    return train_idx, holdout_idx


def verification_eer(embeddings: Tensor, labels: Tensor) -> Tuple[float, float, float, int]:
    """EER, its threshold and pair accuracy over every pair of embeddings.

    Returns ``(eer, threshold, accuracy, n_pairs)``; a pair is accepted when its
    cosine similarity is at least the threshold.
    """
    normed = F.normalize(embeddings.double(), dim=1)
    sims = (normed @ normed.T).numpy()
    label_list = labels.tolist()
    pairs = list(combinations(range(len(label_list)), 2))
    scores = np.array([sims[i, j] for i, j in pairs])
    same = np.array([label_list[i] == label_list[j] for i, j in pairs])
    if same.all() or not same.any():
        raise ConfigurationError("verification pairs need both same and different identities")

    fpr, tpr, thresholds = roc_curve(same, scores)
    fnr = 1.0 - tpr
    best = int(np.argmin(np.abs(fnr - fpr)))
    eer = float((fpr[best] + fnr[best]) / 2)
    threshold = float(min(thresholds[best], 1.0))
    accuracy = float(np.mean((scores >= threshold) == same))
    return eer, threshold, accuracy, len(pairs)


def train_reference_embedder(
    dataset, config: EmbedderConfig, dtype: torch.dtype = torch.float32
) -> Tuple[InstanceDiscriminator, EmbedderSummary]:
    """Train the reference embedder and freeze it.

    Verification accuracy and EER are measured on held-out images of every
    identity, using all pairs among them.
    """
    labels = dataset.labels
    n_classes = len(set(labels.tolist()))
    if n_classes < 2:
        raise ConfigurationError(f"embedder training needs at least 2 identities, got {n_classes}")

    train_idx, holdout_idx = _split_per_identity(labels, config.holdout_fraction)
    images = dataset.images.to(dtype)
    x_train, y_train = images[train_idx], labels[train_idx]

    net = EmbeddingNet(config, n_classes)
    init_weights(net, config.seed, scheme="kaiming")
    net.to(dtype)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    generator = torch.Generator().manual_seed(config.seed)

    logger.info(
        f"Training reference embedder: {n_classes} identities, "
        f"{len(train_idx)} train / {len(holdout_idx)} held-out images"
    )
    net.train()
    for epoch in range(config.epochs):
        order = torch.randperm(len(train_idx), generator=generator)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss = F.cross_entropy(net(x_train[batch]), y_train[batch])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        logger.debug(f"embedder epoch {epoch + 1}/{config.epochs}: loss {total / len(order):.4f}")

    net.eval()
    with torch.no_grad():
        train_accuracy = (net(x_train).argmax(dim=1) == y_train).double().mean().item()
        holdout_embeddings = net.embed(images[holdout_idx])
    eer, threshold, accuracy, n_pairs = verification_eer(holdout_embeddings, labels[holdout_idx])

    d2 = InstanceDiscriminator(net, config, n_classes)
    summary = EmbedderSummary(
        pair_accuracy=accuracy,
        eer=eer,
        eer_threshold=threshold,
        train_accuracy=train_accuracy,
        n_identities=n_classes,
        n_pairs=n_pairs,
        depth=config.depth,
        width=config.width,
        kernel_size=config.kernel_size,
        embedding_dim=config.embedding_dim,
        digest=d2.digest(),
    )
    logger.info(f"✅ Reference embedder: pair accuracy {accuracy:.3f}, EER {eer:.3f}")
    return d2, summary


def save_embedder(
    path: Union[str, Path], d2: InstanceDiscriminator, summary: EmbedderSummary
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "config": d2.config.model_dump(mode="json"),
            "n_classes": d2.n_classes,
            "state_dict": d2.net.state_dict(),
            "summary": summary.model_dump(mode="json"),
        },
        path,
    )
    return path


def load_embedder(
    path: Union[str, Path],
    mode: AccessMode = "white-box",
    dtype: Optional[torch.dtype] = None,
    name: Optional[str] = None,
) -> InstanceDiscriminator:
    """Load a saved embedder, frozen, in the requested access mode."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"embedder file not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    config = EmbedderConfig(**payload["config"])
    net = EmbeddingNet(config, payload["n_classes"])
    state = payload["state_dict"]
    net.to(next(iter(state.values())).dtype)
    net.load_state_dict(state)
    if dtype is not None:
        net.to(dtype)
    return InstanceDiscriminator(net, config, payload["n_classes"], mode, name or mode)
