"""Record models persisted next to checkpoints and reports."""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

CURVE_POINTS = 101
THRESHOLDS: Tuple[float, ...] = tuple(i / 100 for i in range(CURVE_POINTS))

TRACE_COLUMNS = ("iter", "loss_d1", "loss_adv", "loss_rec", "loss_cos", "lr")


class CheckpointRecord(BaseModel):
    """Base for records stored inside checkpoint files.

    Holds no wall-clock fields: equal seeds must give byte-identical files.
    """

    model_config = ConfigDict(from_attributes=True)


class TracePoint(BaseModel):
    """Loss values of one training cycle."""

    iter: int
    loss_d1: float
    loss_adv: float
    loss_rec: float
    loss_cos: float
    lr: float

    def row(self) -> List[Any]:
        return [getattr(self, name) for name in TRACE_COLUMNS]


class CheckpointMeta(CheckpointRecord):
    """Self-description of a checkpoint directory."""

    iteration: int = Field(..., ge=0, description="Completed training cycles")
    seed: int
    precision: str
    config_hash: str
    settings: Dict[str, Any] = Field(default_factory=dict, description="Resolved settings")
    counters: Dict[str, int] = Field(default_factory=dict, description="Update counters")
    shapes: Dict[str, Dict[str, List[int]]] = Field(
        default_factory=dict, description="Parameter shapes per network"
    )
    digest: str = Field(..., description="sha256 over all network parameters")
    summary: Optional[Dict[str, Any]] = Field(None, description="Held-out probe metrics")
    diagnostic: Optional[Dict[str, Any]] = Field(None, description="Non-finite loss values")


class EmbedderSummary(CheckpointRecord):
    """Outcome of reference-embedder training."""

    pair_accuracy: float = Field(..., ge=0, le=1)
    eer: float = Field(..., ge=0, le=1)
    eer_threshold: float
    train_accuracy: float = Field(..., ge=0, le=1)
    n_identities: int
    n_pairs: int
    depth: int
    width: int
    kernel_size: int
    embedding_dim: int
    digest: str


class AttackReport(BaseModel):
    """Attack metrics for one embedder under one pairing protocol.

    ``map`` is the mean, over the thresholds 0.00, 0.01, ..., 1.00, of the
    fraction of generated images accepted as the target. It is not a
    precision-recall quantity.
    """

    model_config = ConfigDict(populate_by_name=True)

    real_acc: float = Field(..., ge=0, le=1)
    fake_acc: float = Field(..., ge=0, le=1)
    map_score: float = Field(..., ge=0, le=1, alias="map")
    sim_before: float = Field(..., ge=-1, le=1)
    sim_after: float = Field(..., ge=-1, le=1)
    sim_delta: float
    sim_real_fake: float = Field(..., ge=-1, le=1)
    ssim_rate: float = Field(..., ge=0, le=1)
    fool_rate: float = Field(..., ge=0, le=1)
    threshold_curve: List[Tuple[float, float]]
    n_probes: int = Field(..., ge=1)
    mode: Literal["white-box", "black-box"]
    protocol: Literal["A->A", "A->A'"]
    variant: str = "both"
    embedder: str = "d2"

    @field_validator("threshold_curve")
    @classmethod
    def _full_curve(cls, curve: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if len(curve) != CURVE_POINTS:
            raise ValueError(f"threshold curve needs {CURVE_POINTS} points, got {len(curve)}")
        for (threshold, accuracy), expected in zip(curve, THRESHOLDS):
            if threshold != expected:
                raise ValueError(f"unexpected threshold {threshold} (want {expected})")
            if not 0.0 <= accuracy <= 1.0:
                raise ValueError(f"accuracy {accuracy} outside [0, 1]")
        return curve

    @model_validator(mode="after")
    def _consistent_delta(self) -> "AttackReport":
        if abs(self.sim_delta - (self.sim_after - self.sim_before)) > 1e-12:
            raise ValueError("sim_delta must equal sim_after - sim_before")
        return self

    def to_flat_dict(self) -> Dict[str, Any]:
        """Scalar fields only; the curve is written separately."""
        return self.model_dump(by_alias=True, exclude={"threshold_curve"})
