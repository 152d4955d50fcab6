"""Differentiable building blocks shared by every network.

Blocks take batched ``N x C x H x W`` tensors and are pure functions of their
input and parameters. Gradients come from torch autograd; :func:`grad_check`
compares them against central finite differences.
"""

import logging
from typing import Callable, Literal, Optional

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from a3gn.errors import ConfigurationError, NumericalError, RejectedInputError

logger = logging.getLogger(__name__)

InitScheme = Literal["normal", "kaiming"]


def _require_4d(x: Tensor, name: str = "x") -> None:
    if x.dim() != 4:
        raise RejectedInputError(f"{name} must be N x C x H x W, got shape {tuple(x.shape)}")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Zero-padded convolution; output side is ``floor((H + 2*pad - k) / stride) + 1``."""
    _require_4d(x)
    if weight.dim() != 4:
        raise RejectedInputError(f"kernel must be C_out x C_in x k x k, got {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise RejectedInputError(
            f"input has {x.shape[1]} channels but the kernel expects {weight.shape[1]}"
        )
    if stride < 1 or pad < 0:
        raise RejectedInputError(f"invalid stride {stride} / pad {pad}")
    if x.shape[2] + 2 * pad < weight.shape[2] or x.shape[3] + 2 * pad < weight.shape[3]:
        raise RejectedInputError(
            f"kernel {tuple(weight.shape[2:])} exceeds padded input {tuple(x.shape[2:])}"
        )
    return F.conv2d(x, weight, bias, stride=stride, padding=pad)


class Conv2d(nn.Conv2d):
    """Square-kernel convolution routed through :func:`conv2d`."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        super().__init__(
            in_channels, out_channels, kernel_size, stride=stride, padding=padding, bias=bias
        )

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride[0], self.padding[0])


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardisation followed by an affine map."""
    _require_4d(x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise RejectedInputError(
            f"gamma/beta must have shape ({channels},), got {tuple(gamma.shape)}"
        )
    if x.shape[2] * x.shape[3] == 1 and eps == 0:
        raise NumericalError("degenerate variance: single spatial position with eps = 0")
    mean = x.mean(dim=(2, 3), keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=(2, 3), keepdim=True)
    normed = centered / torch.sqrt(var + eps)
    return normed * gamma.view(1, -1, 1, 1) + beta.view(1, -1, 1, 1)


class InstanceNorm(nn.Module):
    """Affine instance normalization (gamma=1, beta=0 at construction)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return instance_norm(x, self.gamma, self.beta, self.eps)


class ResidualBlock(nn.Module):
    """conv -> IN -> ReLU -> conv -> IN, added to a skip path.

    With ``stride > 1`` or a width change the skip path becomes a 1x1
    projection; otherwise it is the identity. ``post_activation`` applies a
    ReLU to the sum (ResNet basic block); without it the output is ``x + F(x)``.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: Optional[int] = None,
        stride: int = 1,
        post_activation: bool = False,
    ):
        super().__init__()
        out_channels = out_channels or in_channels
        self.in_channels = in_channels
        self.post_activation = post_activation
        self.branch = nn.Sequential(
            Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False),
            InstanceNorm(out_channels),
            nn.ReLU(),
            Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False),
            InstanceNorm(out_channels),
        )
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or out_channels != in_channels:
            self.shortcut = nn.Sequential(
                Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                InstanceNorm(out_channels),
            )

    def forward(self, x: Tensor) -> Tensor:
        _require_4d(x)
        if x.shape[1] != self.in_channels:
            raise RejectedInputError(
                f"residual block expects {self.in_channels} channels, got {x.shape[1]}"
            )
        out = self.shortcut(x) + self.branch(x)
        return torch.relu(out) if self.post_activation else out


class NonLocalBlock(nn.Module):
    """Embedded-Gaussian self-attention over all spatial positions.

    ``y = x + W_z(softmax(theta(x)^T phi(x)) g(x))`` with theta, phi and g
    projecting to ``C/2`` channels. ``W_z`` starts at zero so the block starts
    as the identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        inner = max(channels // 2, 1)
        self.channels = channels
        self.inner = inner
        self.theta = Conv2d(channels, inner, 1)
        self.phi = Conv2d(channels, inner, 1)
        self.g = Conv2d(channels, inner, 1)
        self.w_z = Conv2d(inner, channels, 1)
        self.zero_output()

    def zero_output(self) -> None:
        with torch.no_grad():
            self.w_z.weight.zero_()
            if self.w_z.bias is not None:
                self.w_z.bias.zero_()

    def attention(self, x: Tensor) -> Tensor:
        """Row-stochastic ``N x HW x HW`` attention matrix."""
        _require_4d(x)
        theta = self.theta(x).flatten(2).transpose(1, 2)
        phi = self.phi(x).flatten(2)
        return torch.softmax(theta @ phi, dim=-1)

    def forward(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        g = self.g(x).flatten(2).transpose(1, 2)
        y = (self.attention(x) @ g).transpose(1, 2).reshape(n, self.inner, h, w)
        return x + self.w_z(y)


class SEBlock(nn.Module):
    """Squeeze (global average pool), excite (bottleneck MLP + sigmoid), scale."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigurationError(
                f"SE reduction {reduction} does not divide channel count {channels}"
            )
        self.channels = channels
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def gates(self, x: Tensor) -> Tensor:
        """Per-channel gates in (0, 1), shape ``N x C``."""
        _require_4d(x)
        squeezed = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(squeezed))))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gates(x)[:, :, None, None]


def init_weights(
    module: nn.Module, seed: int, scheme: InitScheme = "normal", std: float = 0.02
) -> nn.Module:
    """Seeded in-place initialization; equal seeds give bit-identical weights.

    ``normal`` draws kernels from N(0, std) (GAN convention); ``kaiming`` uses
    N(0, 2 / fan_in). Biases start at zero, norms at gamma=1 / beta=0, and
    non-local output projections at zero.
    """
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                weight = sub.weight
                if scheme == "normal":
                    scale = std
                else:
                    fan_in = weight.shape[1] * weight[0][0].numel()
                    scale = (2.0 / fan_in) ** 0.5
                draw = torch.randn(weight.shape, generator=generator, dtype=torch.float64)
                weight.copy_((draw * scale).to(weight.dtype))
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, InstanceNorm):
                sub.gamma.fill_(1.0)
                sub.beta.zero_()
        for sub in module.modules():
            if isinstance(sub, NonLocalBlock):
                sub.zero_output()
    return module


def gradient_error(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, floor: float = 1e-3
) -> float:
    """Max relative error between autograd and central differences of ``sum(f(x))``.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if x.dtype != torch.float64:
        raise RejectedInputError("gradient checks need double precision input")

    probe = x.detach().clone().requires_grad_(True)
    value = f(probe).sum()
    if not torch.isfinite(value):
        raise NumericalError("non-finite value at the gradient-check point", values={"f": value})
    (analytic,) = torch.autograd.grad(value, probe, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x)

    point = x.detach().clone().contiguous()
    flat = point.view(-1)
    numeric = torch.zeros_like(flat)
    # grad mode stays on: f may itself differentiate (gradient penalty)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + h
        plus = f(point).sum().item()
        flat[i] = original - h
        minus = f(point).sum().item()
        flat[i] = original
        numeric[i] = (plus - minus) / (2 * h)
    numeric = numeric.view_as(x)

    if not (torch.isfinite(analytic).all() and torch.isfinite(numeric).all()):
        raise NumericalError("non-finite gradient during gradient check")
    scale = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=floor)
    return ((analytic - numeric).abs() / scale).max().item()


def grad_check(
    f: Callable[[Tensor], Tensor], x: Tensor, tol: float = 1e-4, h: float = 1e-5
) -> bool:
    """True iff the analytic gradient of ``sum(f(x))`` matches finite differences."""
    error = gradient_error(f, x, h=h)
    logger.debug(f"gradient check: max relative error {error:.3e} (tol {tol:.1e})")
    return error <= tol
