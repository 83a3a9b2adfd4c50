from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from pyhiclust.models.TreeModels import TreeTopology


Phase = Literal["pretrain", "tree", "done"]


class TrainSchedule(BaseModel):
    pretrain_epochs: int = Field(default=30, ge=0, description="R2-only epochs")
    tree_epochs: int = Field(default=30, ge=1, description="Full-loss epochs")
    prune_start_epoch: int = Field(
        default=5, ge=0, description="First tree epoch that may prune"
    )
    prunes_per_epoch: Literal[1] = Field(default=1, description="Leaves removed per epoch")
    target_leaves: int = Field(default=8, ge=2, description="Final active-leaf count")
    batch_size: int = Field(default=128, ge=2, description="Anchors per pair batch")
    learning_rate: float = Field(default=3e-4, ge=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    seed: int = Field(default=0, description="Run seed (init, batching, views)")
    eval_every: int = Field(
        default=1, ge=0, description="Evaluate every k epochs; 0 disables"
    )
    num_workers: int = Field(
        default=2, ge=0, description="Threads building pair batches ahead of training"
    )

    model_config = ConfigDict(extra="forbid")

    def check_depth(self, depth: int) -> None:
        """Cross-field checks that need the tree depth. Raises ValueError."""
        if self.target_leaves > 2**depth:
            raise ValueError(
                f"target_leaves={self.target_leaves} exceeds 2^{depth}={2**depth} leaves"
            )
        prunes = 2**depth - self.target_leaves
        if prunes and self.prune_start_epoch + prunes > self.tree_epochs:
            raise ValueError(
                f"prune_start_epoch={self.prune_start_epoch} + {prunes} prunes "
                f"does not fit in tree_epochs={self.tree_epochs}"
            )

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.tree_epochs

    def phase_for(self, epoch: int) -> Phase:
        if epoch < self.pretrain_epochs:
            return "pretrain"
        if epoch < self.total_epochs:
            return "tree"
        return "done"

    def tree_epoch(self, epoch: int) -> int:
        return epoch - self.pretrain_epochs


class LossBreakdown(BaseModel):
    cohi: float
    r1: float
    r2: float
    beta1: float = Field(..., ge=0)
    beta2: float = Field(..., ge=0)
    total: float

    @model_validator(mode="after")
    def validate_total(self) -> "LossBreakdown":
        expected = self.cohi + self.beta1 * self.r1 + self.beta2 * self.r2
        scale = max(1.0, abs(self.cohi), abs(self.beta1 * self.r1), abs(self.beta2 * self.r2))
        if abs(self.total - expected) > 1e-6 * scale:
            raise ValueError(
                f"total={self.total} != cohi + beta1*r1 + beta2*r2 = {expected}"
            )
        return self

    @classmethod
    def compose(
        cls, cohi: float, r1: float, r2: float, beta1: float, beta2: float
    ) -> "LossBreakdown":
        return cls(
            cohi=cohi,
            r1=r1,
            r2=r2,
            beta1=beta1,
            beta2=beta2,
            total=cohi + beta1 * r1 + beta2 * r2,
        )

    @classmethod
    def mean(cls, items: List["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            raise ValueError("cannot average zero loss records")
        n = len(items)
        return cls.compose(
            cohi=sum(i.cohi for i in items) / n,
            r1=sum(i.r1 for i in items) / n,
            r2=sum(i.r2 for i in items) / n,
            beta1=items[0].beta1,
            beta2=items[0].beta2,
        )


class StepRecord(BaseModel):
    step: int
    epoch: int
    phase: Phase
    cohi: float
    r1: float
    r2: float
    total: float
    active_leaves: int


class PruneEvent(BaseModel):
    epoch: int = Field(..., description="Global epoch at whose start the prune ran")
    leaf: int
    mass: float = Field(..., description="Expected data fraction of the pruned leaf")
    leaf_masses: List[float] = Field(
        ..., description="Expected mass of every leaf before pruning (0 if inactive)"
    )
    active_after: int


class EpochMetrics(BaseModel):
    nmi: float
    acc: float
    ari: float
    dp: Optional[float] = None


class EpochRecord(BaseModel):
    epoch: int
    phase: Phase
    loss: LossBreakdown
    active_leaves: int
    pruned_leaf: Optional[int] = None
    metrics: Optional[EpochMetrics] = None


class TrainState(BaseModel):
    epoch: int = Field(default=0, ge=0, description="Completed epochs")
    phase: Phase = "pretrain"
    global_step: int = Field(default=0, ge=0)
    topology: TreeTopology
    history: List[EpochRecord] = Field(default_factory=list)
    prune_events: List[PruneEvent] = Field(default_factory=list)
    checkpoint_path: Optional[str] = None

    @property
    def active_leaves(self) -> int:
        return self.topology.num_active
