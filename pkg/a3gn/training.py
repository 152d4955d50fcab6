"""Three-player training loop.

One cycle is ``n_critic`` critic (D1) updates, one generator-side update by
the full objective (E, G1, G2) and one by the cosine term alone (E, G1).
The instance discriminator D2 is never updated. Iterations count cycles.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import torch
from torch import Tensor, nn

from a3gn.config import EvalConfig, ModelConfig, Settings, TrainConfig, config_hash
from a3gn.data import EvalPair, IdentityDataset, TargetSet
from a3gn.errors import ConfigurationError, NumericalError, RejectedInputError
from a3gn.evaluation import evaluate_attack
from a3gn.losses import (
    cosine_loss,
    generator_objective,
    gradient_penalty,
    kl_divergence,
    reconstruction_loss,
    wgan_objective,
)
from a3gn.models import A3GN, InstanceDiscriminator, parameter_shapes, state_digest
from a3gn.nn_core import init_weights
from a3gn.records import CheckpointMeta, TracePoint
from a3gn.store import Checkpoint, CheckpointStore, load_checkpoint

logger = logging.getLogger(__name__)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """``lr0`` up to ``T/2``, then linear decay to 0 at ``T``."""
    total = cfg.total_iters
    if not 0 <= iteration <= total:
        raise RejectedInputError(f"iteration {iteration} outside [0, {total}]")
    half = total // 2
    if iteration <= half:
        return cfg.lr0
    return cfg.lr0 * (1.0 - (iteration - half) / half)


@dataclass
class UpdateCounters:
    critic: int = 0
    generator: int = 0
    cosine: int = 0


@dataclass
class CycleBatch:
    """Everything one cycle consumes."""

    critic: List[Tensor]
    generator: Tensor
    targets: Tensor
    target_index: int

    @property
    def target(self) -> Tensor:
        return self.targets[self.target_index : self.target_index + 1]


@dataclass
class TrainState:
    config: TrainConfig
    model: A3GN
    d2: InstanceDiscriminator
    optimizers: Dict[str, torch.optim.Optimizer]
    rng: torch.Generator
    iteration: int = 0
    counters: UpdateCounters = field(default_factory=UpdateCounters)
    trace: List[TracePoint] = field(default_factory=list)


class CycleSampler:
    """Draws training batches and the cycle's target image from the state RNG."""

    def __init__(self, images: Tensor, targets: TargetSet, batch_size: int, n_critic: int):
        if images.shape[0] == 0:
            raise ConfigurationError("training dataset is empty")
        if targets.count == 0:
            raise ConfigurationError("target set is empty")
        self.images = images
        self.targets = targets.images.to(images.dtype)
        self.batch_size = batch_size
        self.n_critic = n_critic

    def _draw(self, rng: torch.Generator) -> Tensor:
        idx = torch.randint(self.images.shape[0], (self.batch_size,), generator=rng)
        return self.images[idx]

    def sample(self, rng: torch.Generator) -> CycleBatch:
        critic = [self._draw(rng) for _ in range(self.n_critic)]
        generator = self._draw(rng)
        index = int(torch.randint(self.targets.shape[0], (1,), generator=rng))
        return CycleBatch(critic, generator, self.targets, index)


def _set_requires_grad(module: nn.Module, flag: bool) -> None:
    for param in module.parameters():
        param.requires_grad_(flag)


def _check_finite(iteration: int, **losses: Tensor) -> None:
    values = {name: float(value.detach()) for name, value in losses.items()}
    bad = [name for name, value in values.items() if not math.isfinite(value)]
    if bad:
        raise NumericalError(
            f"non-finite {', '.join(bad)} at iteration {iteration}", iteration=iteration, values=values
        )


def init_state(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    d2: InstanceDiscriminator,
    dtype: torch.dtype = torch.float32,
) -> TrainState:
    """Fresh model, optimizers and RNG for a seeded run."""
    model = A3GN(model_cfg)
    init_weights(model, cfg.seed)
    model.to(dtype)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    optimizers = {
        "critic": torch.optim.Adam(model.critic.parameters(), lr=cfg.lr0, betas=betas),
        "generator": torch.optim.Adam(
            [
                *model.encoder.parameters(),
                *model.generator.parameters(),
                *model.reconstructor.parameters(),
            ],
            lr=cfg.lr0,
            betas=betas,
        ),
        "cosine": torch.optim.Adam(
            [*model.encoder.parameters(), *model.generator.parameters()], lr=cfg.lr0, betas=betas
        ),
    }
    return TrainState(
        config=cfg,
        model=model,
        d2=d2,
        optimizers=optimizers,
        rng=torch.Generator().manual_seed(cfg.seed),
    )


def train_cycle(state: TrainState, batch: CycleBatch) -> TrainState:
    """Run one cycle and append its losses to the trace."""
    cfg, model, d2 = state.config, state.model, state.d2
    weights = cfg.weights
    it = state.iteration
    lr = lr_schedule(it, cfg)
    for optimizer in state.optimizers.values():
        for group in optimizer.param_groups:
            group["lr"] = lr
    model.train()
    targets, index = batch.targets, batch.target_index

    def latent():
        return model.encode_target(
            targets,
            training=True,
            generator=state.rng,
            index=index,
            reparameterize=cfg.latent_sampling,
        )

    # Critic
    _set_requires_grad(model.critic, True)
    for x in batch.critic:
        with torch.no_grad():
            fake = model.generate(x, latent().z)
        gp = gradient_penalty(model.critic, x, fake, state.rng, weights.lambda_gp)
        loss_d1, _ = wgan_objective(model.discriminate(x), model.discriminate(fake), gp)
        _check_finite(it, loss_d1=loss_d1)
        state.optimizers["critic"].zero_grad(set_to_none=True)
        loss_d1.backward()
        state.optimizers["critic"].step()
        state.counters.critic += 1
    _set_requires_grad(model.critic, False)

    # Full generator objective
    x = batch.generator
    e_target = d2.embed(batch.target)
    code = latent()
    fake = model.generate(x, code.z)
    with torch.no_grad():
        real_scores = model.discriminate(x)
    _, loss_adv = wgan_objective(real_scores, model.discriminate(fake), 0.0)
    loss_rec = reconstruction_loss(x, model.reconstruct(fake))
    loss_cos = cosine_loss(e_target, d2.embed(fake, differentiable=True))
    kl = kl_divergence(code.mu, code.logvar) if weights.lambda_kl > 0 else None
    loss_g = generator_objective(loss_adv, loss_rec, loss_cos, weights, kl)
    _check_finite(it, loss_adv=loss_adv, loss_rec=loss_rec, loss_cos=loss_cos)
    state.optimizers["generator"].zero_grad(set_to_none=True)
    loss_g.backward()
    state.optimizers["generator"].step()
    state.counters.generator += 1

    # Cosine term alone
    fake = model.generate(x, latent().z)
    loss_cos_only = cosine_loss(e_target, d2.embed(fake, differentiable=True))
    _check_finite(it, loss_cos_only=loss_cos_only)
    state.optimizers["cosine"].zero_grad(set_to_none=True)
    loss_cos_only.backward()
    state.optimizers["cosine"].step()
    state.counters.cosine += 1
    _set_requires_grad(model.critic, True)

    state.iteration += 1
    state.trace.append(
        TracePoint(
            iter=state.iteration,
            loss_d1=loss_d1.item(),
            loss_adv=loss_adv.item(),
            loss_rec=loss_rec.item(),
            loss_cos=loss_cos.item(),
            lr=lr,
        )
    )
    return state


def snapshot(state: TrainState, model_cfg: ModelConfig) -> Dict[str, Any]:
    """Everything needed to continue the run bit-identically."""
    return {
        "networks": {name: net.state_dict() for name, net in state.model.networks().items()},
        "optimizers": {name: opt.state_dict() for name, opt in state.optimizers.items()},
        "rng_state": state.rng.get_state(),
        "counters": asdict(state.counters),
        "iteration": state.iteration,
        "model_config": model_cfg.model_dump(mode="json"),
        "train_config": state.config.model_dump(mode="json"),
    }


def build_model(payload: Dict[str, Any]) -> A3GN:
    """Rebuild the attack networks from a checkpoint payload."""
    model = A3GN(ModelConfig(**payload["model_config"]))
    networks = payload["networks"]
    dtype = next(iter(networks["generator"].values())).dtype
    model.to(dtype)
    for name, net in model.networks().items():
        net.load_state_dict(networks[name])
    return model


def load_attack_model(path: Union[str, Path]) -> A3GN:
    model = build_model(load_checkpoint(path).payload)
    model.eval()
    return model


def restore_state(checkpoint: Checkpoint, cfg: TrainConfig, d2: InstanceDiscriminator) -> TrainState:
    payload = checkpoint.payload
    model_cfg = ModelConfig(**payload["model_config"])
    dtype = next(iter(payload["networks"]["generator"].values())).dtype
    state = init_state(cfg, model_cfg, d2, dtype)
    for name, net in state.model.networks().items():
        net.load_state_dict(payload["networks"][name])
    for name, opt in state.optimizers.items():
        opt.load_state_dict(payload["optimizers"][name])
    state.rng.set_state(payload["rng_state"])
    state.iteration = int(payload["iteration"])
    state.counters = UpdateCounters(**payload["counters"])
    state.trace = list(checkpoint.trace)
    return state


def _meta(
    state: TrainState, model_cfg: ModelConfig, settings: Optional[Settings], **extra: Any
) -> CheckpointMeta:
    cfg = state.config
    return CheckpointMeta(
        iteration=state.iteration,
        seed=cfg.seed,
        precision=str(next(state.model.parameters()).dtype).replace("torch.", ""),
        config_hash=config_hash(settings) if settings is not None else config_hash(cfg, model_cfg),
        settings=settings.model_dump(mode="json") if settings is not None else {},
        counters=asdict(state.counters),
        shapes={name: parameter_shapes(net) for name, net in state.model.networks().items()},
        digest=state_digest(state.model),
        **extra,
    )


def train(
    cfg: TrainConfig,
    dataset: IdentityDataset,
    target: TargetSet,
    d2: InstanceDiscriminator,
    store: CheckpointStore,
    model_cfg: Optional[ModelConfig] = None,
    *,
    dtype: torch.dtype = torch.float32,
    probes: Optional[List[EvalPair]] = None,
    eval_cfg: Optional[EvalConfig] = None,
    resume_from: Optional[Union[str, Path]] = None,
    stop_at: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> List[Path]:
    """Train until ``total_iters`` cycles (or ``stop_at``), checkpointing along the way.

    The last checkpoint carries the config hash and, when ``probes`` are
    given, the attack metrics on them.

    Raises:
        ConfigurationError: empty dataset or target set
        NumericalError: a loss went non-finite; a diagnostic snapshot is written first
    """
    if len(dataset) == 0:
        raise ConfigurationError("training dataset is empty")
    model_cfg = model_cfg or ModelConfig(image_size=cfg.image_size, ablation=cfg.ablation)
    if resume_from is not None:
        state = restore_state(load_checkpoint(resume_from), cfg, d2)
        model_cfg = state.model.config
        logger.info(f"Resuming from iteration {state.iteration}: {resume_from}")
    else:
        state = init_state(cfg, model_cfg, d2, dtype)
    dtype = next(state.model.parameters()).dtype
    sampler = CycleSampler(dataset.images.to(dtype), target, cfg.batch_size, cfg.n_critic)

    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    interval = cfg.checkpoint_interval
    d2_digest = d2.digest()
    written: List[Path] = []
    logger.info(
        f"🚀 Training {model_cfg.ablation.variant} variant: cycles {state.iteration}..{end}, "
        f"batch {cfg.batch_size}, {cfg.n_critic} critic steps per cycle"
    )

    while state.iteration < end:
        batch = sampler.sample(state.rng)
        try:
            train_cycle(state, batch)
        except NumericalError as exc:
            diagnostic = {"error": str(exc), **{k: str(v) for k, v in exc.values.items()}}
            path = store.save_diagnostic(
                snapshot(state, model_cfg),
                _meta(state, model_cfg, settings, diagnostic=diagnostic),
                state.trace,
            )
            logger.error(f"❌ {exc}; diagnostic snapshot at {path}")
            raise

        point = state.trace[-1]
        if state.iteration % cfg.log_every == 0:
            logger.info(
                f"cycle {point.iter}/{cfg.total_iters} lr={point.lr:.2e} d1={point.loss_d1:.4f} "
                f"adv={point.loss_adv:.4f} rec={point.loss_rec:.4f} cos={point.loss_cos:.4f}"
            )
        if state.iteration % interval == 0 and state.iteration < end:
            meta = _meta(state, model_cfg, settings)
            written.append(store.save(snapshot(state, model_cfg), meta, state.trace))

    if d2.digest() != d2_digest:
        raise NumericalError("instance discriminator parameters changed during training")

    summary = None
    if probes:
        report = evaluate_attack(state.model, d2, probes, eval_cfg or EvalConfig())
        summary = report.to_flat_dict()
        logger.info(
            f"Probe summary: fake_acc={report.fake_acc:.3f} real_acc={report.real_acc:.3f} "
            f"sim_delta={report.sim_delta:.3f}"
        )
    final_meta = _meta(state, model_cfg, settings, summary=summary)
    written.append(store.save(snapshot(state, model_cfg), final_meta, state.trace))
    logger.info(f"✅ Training finished at cycle {state.iteration}")
    return written
