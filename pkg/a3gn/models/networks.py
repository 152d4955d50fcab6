"""The four attack networks and their container.

E (attentional VAE encoder) maps a target face to a 7-component latent code,
G1 turns (face, code) into the adversarial face, G2 maps it back to the
original face, and D1 is a PatchGAN Wasserstein critic.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import Tensor, nn

from a3gn.config import LATENT_DIM, ModelConfig
from a3gn.errors import ConfigurationError, NumericalError, RejectedInputError
from a3gn.nn_core import Conv2d, InstanceNorm, NonLocalBlock, ResidualBlock, SEBlock

logger = logging.getLogger(__name__)

NETWORK_NAMES = ("encoder", "generator", "reconstructor", "critic")


@dataclass
class LatentCode:
    """Latent code ``z`` (``N x 7``) with the Gaussian it was drawn from."""

    z: Tensor
    mu: Optional[Tensor] = None
    logvar: Optional[Tensor] = None
    source_index: Optional[int] = None


def broadcast_concat(x: Tensor, z: Tensor) -> Tensor:
    """Append each latent component as a constant image plane: ``N x (3+7) x H x W``."""
    if x.dim() != 4 or x.shape[1] != 3:
        raise RejectedInputError(f"expected N x 3 x H x W faces, got {tuple(x.shape)}")
    if z.dim() == 1:
        z = z.unsqueeze(0)
    if z.shape[-1] != LATENT_DIM:
        raise RejectedInputError(f"latent code must have {LATENT_DIM} components")
    if z.shape[0] == 1:
        z = z.expand(x.shape[0], -1)
    elif z.shape[0] != x.shape[0]:
        raise RejectedInputError(f"{z.shape[0]} codes for {x.shape[0]} faces")
    planes = z.to(x.dtype)[:, :, None, None].expand(-1, -1, x.shape[2], x.shape[3])
    return torch.cat([x, planes], dim=1)


class Encoder(nn.Module):
    """Residual encoder with optional non-local blocks after blocks 2 and 4.

    Basic blocks apply a ReLU after the residual sum, so the pooled channel
    means depend on the image and not only on the norm offsets.
    """

    def __init__(self, channels: int = 16, geometric_attention: bool = True):
        super().__init__()
        c = channels
        self.stem = nn.Sequential(
            Conv2d(3, c, 3, stride=2, padding=1, bias=False), InstanceNorm(c), nn.ReLU()
        )
        self.block1 = ResidualBlock(c, c, post_activation=True)
        self.block2 = ResidualBlock(c, 2 * c, stride=2, post_activation=True)
        self.attention2 = NonLocalBlock(2 * c) if geometric_attention else nn.Identity()
        self.block3 = ResidualBlock(2 * c, 4 * c, stride=2, post_activation=True)
        self.block4 = ResidualBlock(4 * c, 8 * c, stride=2, post_activation=True)
        self.attention4 = NonLocalBlock(8 * c) if geometric_attention else nn.Identity()
        self.head = nn.Linear(8 * c, 2 * LATENT_DIM)

    def forward(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        h = self.stem(y)
        h = self.attention2(self.block2(self.block1(h)))
        h = self.attention4(self.block4(self.block3(h)))
        mu, logvar = self.head(h.mean(dim=(2, 3))).chunk(2, dim=1)
        return mu, logvar


class Generator(nn.Module):
    """Down x2 -> residual blocks -> up x2, tanh output in [-1, 1].

    With channel attention an SE block follows each downsampling layer.
    """

    def __init__(
        self,
        in_channels: int,
        channels: int = 16,
        residual_blocks: int = 6,
        channel_attention: bool = True,
        se_reduction: int = 2,
    ):
        super().__init__()
        c = channels
        self.in_channels = in_channels
        self.stem = nn.Sequential(
            Conv2d(in_channels, c, 7, padding=3, bias=False), InstanceNorm(c), nn.ReLU()
        )
        self.down1 = nn.Sequential(
            Conv2d(c, 2 * c, 4, stride=2, padding=1, bias=False), InstanceNorm(2 * c), nn.ReLU()
        )
        self.se1 = SEBlock(2 * c, se_reduction) if channel_attention else nn.Identity()
        self.down2 = nn.Sequential(
            Conv2d(2 * c, 4 * c, 4, stride=2, padding=1, bias=False),
            InstanceNorm(4 * c),
            nn.ReLU(),
        )
        self.se2 = SEBlock(4 * c, se_reduction) if channel_attention else nn.Identity()
        self.residual = nn.Sequential(*[ResidualBlock(4 * c) for _ in range(residual_blocks)])
        self.up1 = nn.Sequential(
            nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1, bias=False),
            InstanceNorm(2 * c),
            nn.ReLU(),
        )
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1, bias=False),
            InstanceNorm(c),
            nn.ReLU(),
        )
        self.head = nn.Sequential(Conv2d(c, 3, 7, padding=3, bias=False), nn.Tanh())

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise RejectedInputError(
                f"generator expects N x {self.in_channels} x H x W, got {tuple(x.shape)}"
            )
        h = self.se1(self.down1(self.stem(x)))
        h = self.residual(self.se2(self.down2(h)))
        return self.head(self.up2(self.up1(h)))


class PatchDiscriminator(nn.Module):
    """PatchGAN critic: stride-2 3x3 convs with leaky ReLU, no normalization, raw scores."""

    def __init__(self, channels: int = 16, layers: int = 4):
        super().__init__()
        blocks: List[nn.Module] = []
        c_in, c_out = 3, channels
        for _ in range(layers):
            blocks += [Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.LeakyReLU(0.01)]
            c_in, c_out = c_out, min(c_out * 2, channels * 8)
        self.main = nn.Sequential(*blocks)
        self.score = Conv2d(c_in, 1, 3, stride=1, padding=1, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.score(self.main(x))


class A3GN(nn.Module):
    """Encoder E, generators G1/G2 and critic D1 with disjoint parameters."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.image_size % 4:
            raise ConfigurationError(
                f"image_size {config.image_size} must be divisible by 4 (two down/up stages)"
            )
        ablation = config.ablation
        self.config = config
        self.encoder = Encoder(config.encoder_channels, ablation.geometric_attention)
        self.generator = Generator(
            3 + LATENT_DIM,
            config.base_channels,
            config.residual_blocks,
            ablation.channel_attention,
            config.se_reduction,
        )
        self.reconstructor = Generator(
            3,
            config.base_channels,
            config.residual_blocks,
            ablation.channel_attention,
            config.se_reduction,
        )
        self.critic = PatchDiscriminator(config.critic_channels, config.critic_layers)

    @property
    def variant(self) -> str:
        return self.config.ablation.variant

    def networks(self) -> Dict[str, nn.Module]:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def encode(self, images: Tensor) -> Tensor:
        """Deterministic code (the mean) of every image: ``N x 7``."""
        mu, _ = self.encoder(images)
        return mu

    def encode_target(
        self,
        targets: Union[Tensor, Sequence[Tensor]],
        training: bool = False,
        generator: Optional[torch.Generator] = None,
        index: Optional[int] = None,
        reparameterize: bool = True,
    ) -> LatentCode:
        """Latent code of the target identity.

        In training one target image (drawn uniformly unless ``index`` is
        given) is encoded and, with ``reparameterize``, sampled as
        ``mu + exp(logvar / 2) * eps``. In inference the per-image means are
        averaged.
        """
        images = _stack_targets(targets)
        if not training:
            mu = self.encode(images).mean(dim=0, keepdim=True)
            return LatentCode(z=mu, mu=mu)

        if index is None:
            index = int(torch.randint(images.shape[0], (1,), generator=generator))
        mu, logvar = self.encoder(images[index : index + 1])
        z = mu
        if reparameterize:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            z = mu + torch.exp(logvar / 2) * eps.to(mu.device)
        return LatentCode(z=z, mu=mu, logvar=logvar, source_index=index)

    def generate(self, x: Tensor, z: Tensor) -> Tensor:
        out = self.generator(broadcast_concat(x, z))
        _require_finite(out, "G1 output")
        return out

    def reconstruct(self, x_hat: Tensor) -> Tensor:
        out = self.reconstructor(x_hat)
        _require_finite(out, "G2 output")
        return out

    def discriminate(self, x: Tensor) -> Tensor:
        return self.critic(x)


def _stack_targets(targets: Union[Tensor, Sequence[Tensor]]) -> Tensor:
    if isinstance(targets, Tensor):
        images = targets if targets.dim() == 4 else targets.unsqueeze(0)
    else:
        if len(targets) == 0:
            raise ConfigurationError("target set is empty")
        images = torch.stack([t if t.dim() == 3 else t.squeeze(0) for t in targets])
    if images.shape[0] == 0:
        raise ConfigurationError("target set is empty")
    return images


def _require_finite(t: Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericalError(f"non-finite values in {what}")


def parameter_shapes(module: nn.Module) -> Dict[str, List[int]]:
    return {name: list(p.shape) for name, p in module.named_parameters()}


def state_digest(module: nn.Module) -> str:
    """sha256 over every parameter and buffer, in name order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(str(tensor.dtype).encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
