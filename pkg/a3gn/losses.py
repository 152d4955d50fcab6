"""Objectives of the three-player game.

All losses reduce to scalars by averaging over the batch (and over patches for
patch-map critics).
"""

import logging

import torch
from torch import Tensor, nn

from a3gn.config import LossWeights
from a3gn.errors import DegenerateEmbeddingError, NumericalError, RejectedInputError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of ``N x d`` embeddings (a single row broadcasts).

    Raises:
        DegenerateEmbeddingError: a row has zero norm
    """
    a = a.unsqueeze(0) if a.dim() == 1 else a
    b = b.unsqueeze(0) if b.dim() == 1 else b
    if a.shape[-1] != b.shape[-1]:
        raise RejectedInputError(f"embedding sizes differ: {a.shape[-1]} vs {b.shape[-1]}")
    a, b = torch.broadcast_tensors(a, b)
    sq_a = (a * a).sum(dim=-1)
    sq_b = (b * b).sum(dim=-1)
    zero = (sq_a == 0) | (sq_b == 0)
    if zero.any():
        index = int(zero.nonzero()[0])
        raise DegenerateEmbeddingError(f"zero-norm embedding at row {index}", index=index)
    # sqrt(|a|^2 |b|^2) keeps cos(e, e) exactly 1
    sims = (a * b).sum(dim=-1) / torch.sqrt(sq_a * sq_b)
    return sims.clamp(-1.0, 1.0)


def cosine_loss(e_target: Tensor, e_fake: Tensor) -> Tensor:
    """``1 - cos`` averaged over the batch, in [0, 2]."""
    return 1.0 - cosine_similarity(e_target, e_fake).mean()


def reconstruction_loss(x: Tensor, x_rec: Tensor) -> Tensor:
    """Mean absolute pixel difference."""
    if x.shape != x_rec.shape:
        raise RejectedInputError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def adversarial_loss_reference(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """Log-likelihood GAN value ``E[log D(x)] + E[log(1 - D(G(x)))]``.

    Scores are logits. Log arguments are clamped at 1e-12.
    """
    d_real = torch.sigmoid(real_scores)
    d_fake_rest = 1.0 - torch.sigmoid(fake_scores)
    if (d_real < LOG_FLOOR).any() or (d_fake_rest < LOG_FLOOR).any():
        logger.warning(f"clamping log argument at {LOG_FLOOR}")
    return (
        torch.log(d_real.clamp_min(LOG_FLOOR)).mean()
        + torch.log(d_fake_rest.clamp_min(LOG_FLOOR)).mean()
    )


def gradient_penalty(
    critic: nn.Module,
    x_real: Tensor,
    x_fake: Tensor,
    generator: torch.Generator = None,
    lambda_gp: float = 10.0,
) -> Tensor:
    """``lambda * E[(||grad D(x_hat)||_2 - 1)^2]`` at random interpolates.

    One interpolation factor is drawn per sample; the gradient norm is taken
    over the whole image. The result stays differentiable in the critic.
    """
    if x_real.shape != x_fake.shape:
        raise RejectedInputError(
            f"real/fake shapes differ: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}"
        )
    n = x_real.shape[0]
    alpha = torch.rand((n, 1, 1, 1), generator=generator, dtype=x_real.dtype)
    alpha = alpha.to(x_real.device)
    x_hat = (alpha * x_real.detach() + (1 - alpha) * x_fake.detach()).requires_grad_(True)
    scores = critic(x_hat).reshape(n, -1).mean(dim=1)

    grads = None
    if scores.requires_grad:
        (grads,) = torch.autograd.grad(
            scores.sum(), x_hat, create_graph=True, allow_unused=True
        )
    if grads is None:
        grads = torch.zeros_like(x_hat)
    norms = grads.reshape(n, -1).norm(2, dim=1)
    if not torch.isfinite(norms).all():
        raise NumericalError("non-finite critic gradient in the gradient penalty")
    return lambda_gp * ((norms - 1.0) ** 2).mean()


def wgan_objective(real_scores: Tensor, fake_scores: Tensor, gp: Tensor):
    """Critic loss and generator adversarial term of the Wasserstein game.

    Returns ``(mean(D(fake)) - mean(D(real)) + gp, -mean(D(fake)))``.
    """
    fake_mean = fake_scores.mean()
    return fake_mean - real_scores.mean() + gp, -fake_mean


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), averaged over latent components."""
    return -0.5 * torch.mean(1 + logvar - mu * mu - torch.exp(logvar))


def generator_objective(
    adv: Tensor, rec: Tensor, cos: Tensor, weights: LossWeights, kl: Tensor = None
) -> Tensor:
    total = adv + weights.lambda_rec * rec + weights.lambda_cos * cos
    if kl is not None and weights.lambda_kl > 0:
        total = total + weights.lambda_kl * kl
    return total
