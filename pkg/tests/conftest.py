"""Pytest configuration and fixtures.

Everything runs in double precision on tiny networks and a small synthetic
face set so the suite stays fast on a CPU.
"""

import pytest
import torch

from a3gn.config import EmbedderConfig, EvalConfig, ModelConfig, TrainConfig
from a3gn.data import IdentityDataset, TargetSet, make_target_set, split_holdout, synth_faces
from a3gn.models import A3GN, InstanceDiscriminator, train_reference_embedder
from a3gn.nn_core import init_weights
from a3gn.store import CheckpointStore

IMAGE_SIZE = 32


@pytest.fixture
def model_config() -> ModelConfig:
    """Smallest architecture that still has every block."""
    return ModelConfig(
        image_size=IMAGE_SIZE,
        base_channels=4,
        encoder_channels=2,
        critic_channels=4,
        critic_layers=2,
        residual_blocks=1,
        se_reduction=2,
    )


@pytest.fixture
def train_config() -> TrainConfig:
    return TrainConfig(
        total_iters=4,
        batch_size=2,
        n_critic=5,
        image_size=IMAGE_SIZE,
        seed=3,
        checkpoint_every=2,
        log_every=1,
    )


@pytest.fixture
def eval_config() -> EvalConfig:
    return EvalConfig(batch_size=4, protocol="A->A")


@pytest.fixture
def model(model_config: ModelConfig) -> A3GN:
    net = A3GN(model_config)
    init_weights(net, seed=0)
    return net.double()


@pytest.fixture(scope="session")
def faces() -> IdentityDataset:
    """3 identities x 8 images, 32x32."""
    return synth_faces(seed=1, n_identities=3, per_identity=8, image_size=IMAGE_SIZE)


@pytest.fixture(scope="session")
def embedder_pair(faces: IdentityDataset):
    config = EmbedderConfig(
        image_size=IMAGE_SIZE,
        depth=2,
        width=4,
        embedding_dim=8,
        epochs=2,
        batch_size=8,
        holdout_fraction=0.25,
        seed=0,
    )
    return train_reference_embedder(faces, config, torch.float64)


@pytest.fixture(scope="session")
def d2(embedder_pair) -> InstanceDiscriminator:
    return embedder_pair[0]


@pytest.fixture
def target(faces: IdentityDataset) -> TargetSet:
    return make_target_set(faces, identity=0, count=7)


@pytest.fixture
def split(faces: IdentityDataset, target: TargetSet):
    """(train, probes) with the target identity removed from both."""
    return split_holdout(faces, per_identity=3, exclude=[target.name])


@pytest.fixture
def store(tmp_path) -> CheckpointStore:
    """Create test checkpoint store."""
    return CheckpointStore(tmp_path / "checkpoints")
