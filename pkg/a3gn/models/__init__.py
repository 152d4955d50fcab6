"""Attack networks and the frozen instance discriminator."""

from a3gn.models.embedder import (
    EmbeddingNet,
    InstanceDiscriminator,
    load_embedder,
    save_embedder,
    train_reference_embedder,
    verification_eer,
)
from a3gn.models.networks import (
    A3GN,
    Encoder,
    Generator,
    LatentCode,
    PatchDiscriminator,
    broadcast_concat,
    parameter_shapes,
    state_digest,
)

__all__ = [
    "A3GN",
    "Encoder",
    "Generator",
    "PatchDiscriminator",
    "LatentCode",
    "broadcast_concat",
    "parameter_shapes",
    "state_digest",
    "EmbeddingNet",
    "InstanceDiscriminator",
    "train_reference_embedder",
    "verification_eer",
    "save_embedder",
    "load_embedder",
]
