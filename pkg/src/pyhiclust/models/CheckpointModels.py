from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from pyhiclust.models.ConfigModels import ContrastHeadSpec, EncoderSpec
from pyhiclust.models.TrainingModels import TrainState
from pyhiclust.utils.constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION


class CheckpointMeta(BaseModel):
    """Everything in a checkpoint archive except the tensors themselves."""

    format: str = Field(default=CHECKPOINT_FORMAT, description="Archive format tag")
    version: int = Field(default=CHECKPOINT_VERSION)
    encoder: EncoderSpec
    depth: int = Field(..., ge=1)
    router_mode: Literal["linear", "two-layer"] = "linear"
    contrast_head: ContrastHeadSpec
    state: TrainState
    run_config: Optional[Dict[str, Any]] = Field(
        None, description="The validated run config the archive was trained with"
    )
    model_tensors: List[str] = Field(default_factory=list)
    optimizer_groups: Optional[List[Dict[str, Any]]] = None
    optimizer_tensors: List[str] = Field(default_factory=list)
    optimizer_scalars: Dict[str, float] = Field(default_factory=dict)
