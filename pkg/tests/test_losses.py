"""Tests for the game objectives."""

import logging
import math

import pytest
import torch
from torch import nn

from a3gn.config import LossWeights
from a3gn.errors import DegenerateEmbeddingError, RejectedInputError
from a3gn.losses import (
    adversarial_loss_reference,
    cosine_loss,
    cosine_similarity,
    generator_objective,
    gradient_penalty,
    kl_divergence,
    reconstruction_loss,
    wgan_objective,
)
from a3gn.nn_core import grad_check


class LinearCritic(nn.Module):
    """score(x) = <w, x> with ||w|| = scale, emitted as a 1x1 patch map."""

    def __init__(self, shape, scale: float):
        super().__init__()
        weight = torch.zeros(shape, dtype=torch.float64)
        weight.view(-1)[0] = scale
        self.weight = nn.Parameter(weight)

    def forward(self, x):
        return (x * self.weight).sum(dim=(1, 2, 3)).view(-1, 1, 1, 1)


class ConstantCritic(nn.Module):
    def forward(self, x):
        return torch.ones(x.shape[0], 1, 2, 2, dtype=x.dtype)


def _vec(*values):
    return torch.tensor(values, dtype=torch.float64)


def test_cosine_similarity_examples():
    """Test identical, orthogonal and scaled vectors."""
    a = _vec(0.3, -1.2, 2.5)
    assert cosine_similarity(a, a).item() == 1.0
    assert cosine_similarity(_vec(1, 0), _vec(0, 1)).item() == 0.0
    assert cosine_similarity(2 * a, a).item() == 1.0


def test_cosine_similarity_zero_norm_reports_row():
    """Test the degenerate-embedding error names the offending row."""
    a = torch.stack([_vec(1, 2), _vec(0, 0)])
    with pytest.raises(DegenerateEmbeddingError) as info:
        cosine_similarity(a, _vec(1, 1))
    assert info.value.index == 1


@pytest.mark.parametrize("sign,expected", [(1.0, 0.0), (-1.0, 2.0)])
def test_cosine_loss_extremes_are_exact(sign, expected):
    """Test 1 - cos at the aligned and opposite extremes."""
    e = torch.stack([_vec(0.2, -0.7, 1.9), _vec(3.0, 0.1, -0.4)])
    assert cosine_loss(e, sign * e).item() == expected


def test_cosine_loss_orthogonal_is_one():
    """Test orthogonal embeddings give a loss of exactly 1."""
    assert cosine_loss(_vec(1, 0, 0), _vec(0, 0, 5)).item() == 1.0


def test_reconstruction_loss_is_symmetric_mean_l1():
    """Test value, symmetry and shape check."""
    x = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    y = torch.full_like(x, 0.5)

    assert reconstruction_loss(x, y).item() == 0.5
    assert reconstruction_loss(x, y).item() == reconstruction_loss(y, x).item()
    assert reconstruction_loss(y, y).item() == 0.0
    with pytest.raises(RejectedInputError):
        reconstruction_loss(x, y[:1])


def test_adversarial_loss_reference_approaches_zero_for_perfect_critic():
    """Test the log-likelihood value when real scores saturate high and fake scores low."""
    loss = adversarial_loss_reference(_vec(20.0, 25.0), _vec(-20.0, -25.0))
    assert -1e-8 < loss.item() < 0.0


def test_adversarial_loss_reference_clamps_with_warning(caplog):
    """Test the log argument floor and its warning."""
    with caplog.at_level(logging.WARNING, logger="a3gn.losses"):
        loss = adversarial_loss_reference(_vec(-100.0), _vec(100.0))
    assert torch.isfinite(loss)
    assert any("clamping" in r.message for r in caplog.records)


@pytest.mark.parametrize("scale,expected", [(0.0, 10.0), (0.5, 2.5), (1.0, 0.0), (3.0, 40.0)])
def test_gradient_penalty_linear_critic(scale, expected):
    """Test lambda * (||w|| - 1)^2 for critics with a known input gradient."""
    shape = (1, 3, 4, 4)
    critic = LinearCritic(shape, scale)
    g = torch.Generator().manual_seed(0)
    real = torch.rand(5, 3, 4, 4, generator=g, dtype=torch.float64)
    fake = torch.rand(5, 3, 4, 4, generator=g, dtype=torch.float64)

    gp = gradient_penalty(critic, real, fake, generator=g, lambda_gp=10.0)

    assert gp.item() == pytest.approx(expected, abs=1e-12)


def test_gradient_penalty_constant_critic():
    """Test a critic with zero input gradient is penalized by lambda."""
    x = torch.zeros(3, 3, 4, 4, dtype=torch.float64)
    assert gradient_penalty(ConstantCritic(), x, x, lambda_gp=10.0).item() == 10.0


def test_gradient_penalty_is_differentiable_in_critic():
    """Test the penalty back-propagates into the critic weights."""
    critic = LinearCritic((1, 3, 4, 4), 3.0)
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    gradient_penalty(critic, x, x.flip(0)).backward()
    assert critic.weight.grad.abs().sum() > 0


def test_gradient_penalty_rejects_shape_mismatch():
    """Test real and fake batches must match."""
    x = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    with pytest.raises(RejectedInputError):
        gradient_penalty(ConstantCritic(), x, x[:1])


def test_wgan_objective_averages_patches():
    """Test patch-map scores reduce like a scalar recomputation over patches."""
    g = torch.Generator().manual_seed(1)
    real = torch.randn(1, 1, 2, 2, generator=g, dtype=torch.float64)
    fake = torch.randn(1, 1, 2, 2, generator=g, dtype=torch.float64)
    gp = torch.tensor(0.25, dtype=torch.float64)

    loss_d, loss_g = wgan_objective(real, fake, gp)

    r = [real.flatten()[i].item() for i in range(4)]
    f = [fake.flatten()[i].item() for i in range(4)]
    assert abs(loss_d.item() - (sum(f) / 4 - sum(r) / 4 + 0.25)) < 1e-12
    assert abs(loss_g.item() + sum(f) / 4) < 1e-12


def test_kl_divergence_zero_at_prior():
    """Test KL vanishes for the standard normal."""
    zeros = torch.zeros(3, 7, dtype=torch.float64)
    assert kl_divergence(zeros, zeros).item() == 0.0
    assert kl_divergence(zeros + 1, zeros).item() > 0


def test_generator_objective_weights_terms():
    """Test the weighted sum and that KL only counts with a positive weight."""
    adv, rec, cos, kl = (torch.tensor(v, dtype=torch.float64) for v in (1.0, 2.0, 0.5, 4.0))

    plain = generator_objective(adv, rec, cos, LossWeights(), kl)
    with_kl = generator_objective(adv, rec, cos, LossWeights(lambda_kl=0.5), kl)

    assert plain.item() == 1.0 + 10 * 2.0 + 10 * 0.5
    assert with_kl.item() == plain.item() + 2.0


def _seeded(seed, *shape):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64)


@pytest.mark.parametrize("seed", range(5))
def test_losses_pass_gradient_check(seed):
    """Test cosine, L1 and KL gradients against central differences."""
    target = _seeded(100 + seed, 3, 6)
    images = _seeded(200 + seed, 2, 3, 4, 4)
    logvar = _seeded(300 + seed, 4, 7)

    assert grad_check(lambda e: cosine_loss(target, e), _seeded(seed, 3, 6))
    assert grad_check(lambda x: reconstruction_loss(images, x), _seeded(seed, 2, 3, 4, 4))
    assert grad_check(lambda mu: kl_divergence(mu, logvar), _seeded(seed, 4, 7))
    assert grad_check(lambda lv: kl_divergence(logvar, lv), _seeded(seed, 4, 7))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_penalty_passes_gradient_check_in_critic_weights(seed):
    """Test the penalty's gradient with respect to the critic weights."""
    real = _seeded(10 + seed, 3, 3, 4, 4)
    fake = _seeded(20 + seed, 3, 3, 4, 4)

    def penalty(weight):
        def critic(x):
            return torch.tanh((x * weight).sum(dim=(1, 2, 3))).view(-1, 1, 1, 1)

        g = torch.Generator().manual_seed(seed)
        return gradient_penalty(critic, real, fake, generator=g, lambda_gp=10.0)

    assert grad_check(penalty, _seeded(seed, 1, 3, 4, 4) * 0.3)


def test_adversarial_loss_reference_at_chance():
    """Test D = 0.5 everywhere gives 2 log 0.5."""
    zeros = torch.zeros(4, 1, 2, 2, dtype=torch.float64)
    value = adversarial_loss_reference(zeros, zeros)
    assert value.item() == pytest.approx(-1.3863, abs=1e-4)
    assert value.item() == pytest.approx(2 * math.log(0.5), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_game_objectives_pass_gradient_check(seed):
    """Test critic, reference and composite objective gradients against central differences."""
    real = _seeded(400 + seed, 2, 1, 2, 2)
    fake = _seeded(500 + seed, 2, 1, 2, 2)
    gp = _seeded(600 + seed, 1).squeeze()
    weights = LossWeights(lambda_kl=0.5)

    assert grad_check(lambda r: wgan_objective(r, fake, gp)[0], _seeded(seed, 2, 1, 2, 2))
    assert grad_check(lambda f: wgan_objective(real, f, gp)[0], _seeded(seed, 2, 1, 2, 2))
    assert grad_check(lambda f: wgan_objective(real, f, gp)[1], _seeded(seed, 2, 1, 2, 2))
    assert grad_check(lambda r: adversarial_loss_reference(r, fake), _seeded(seed, 2, 1, 2, 2))
    assert grad_check(lambda f: adversarial_loss_reference(real, f), _seeded(seed, 2, 1, 2, 2))
    assert grad_check(
        lambda t: generator_objective(t[0], t[1], t[2], weights, kl=t[3]), _seeded(seed, 4)
    )
