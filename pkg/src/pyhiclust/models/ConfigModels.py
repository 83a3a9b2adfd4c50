import copy
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from pyhiclust.models.DataModels import AugmentationPolicy, DatasetSpec
from pyhiclust.models.TrainingModels import TrainSchedule
from pyhiclust.utils.constants import PROB_EPSILON


Architecture = Literal["mlp-small", "cnn-small", "resnet18", "resnet34", "resnet50"]


class EncoderSpec(BaseModel):
    architecture: Architecture = Field(..., description="Registered backbone tag")
    embed_dim: int = Field(default=64, ge=1, description="Embedding size N")
    hidden_width: int = Field(default=128, ge=1, description="mlp-small hidden width")
    input_shape: Optional[Tuple[int, ...]] = Field(
        None, description="(D,) for vectors or (C, H, W); filled in from the dataset"
    )

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def validate_shape(self) -> "EncoderSpec":
        if self.input_shape is None:
            return self
        if any(d < 1 for d in self.input_shape):
            raise ValueError(f"input_shape must be positive, got {self.input_shape}")
        if self.architecture != "mlp-small" and len(self.input_shape) != 3:
            raise ValueError(
                f"{self.architecture} needs an image shape (C, H, W), "
                f"got {self.input_shape}"
            )
        return self

    def with_input_shape(self, shape: Tuple[int, ...]) -> "EncoderSpec":
        return self.model_validate({**self.model_dump(), "input_shape": tuple(shape)})


class ContrastHeadSpec(BaseModel):
    mode: Literal["identity", "two-layer"] = Field(default="identity")
    output_dim: Optional[int] = Field(
        None, ge=1, description="M; defaults to N for identity, 128 for two-layer"
    )
    hidden_dim: Optional[int] = Field(None, ge=1, description="Defaults to N")

    model_config = ConfigDict(extra="forbid")


class TreeSpec(BaseModel):
    depth: int = Field(default=3, ge=1, le=12, description="Tree depth T")
    router: Literal["linear", "two-layer"] = Field(
        default="linear", description="Router head: one layer, or hidden layer + output"
    )

    model_config = ConfigDict(extra="forbid")


LOSS_VARIANTS: Dict[str, Dict[str, float]] = {
    "full": {},
    "cohi+r1": {"beta2": 0.0},
    "cohi": {"beta1": 0.0, "beta2": 0.0},
}


class LossConfig(BaseModel):
    variant: Literal["full", "cohi+r1", "cohi"] = Field(
        default="full", description="Ablation preset; explicit betas win"
    )
    beta1: Optional[float] = Field(
        None, ge=0, description="R1 weight; None resolves to 2^-T"
    )
    beta2: float = Field(default=1.0, ge=0, description="R2 (NT-Xent) weight")
    ntxent_temperature: float = Field(default=0.5, gt=0)
    level_range: Literal["include_leaves", "paper_literal"] = Field(
        default="include_leaves",
        description=(
            "include_leaves sums levels 1..T; paper_literal sums 0..T-1 "
            "(the leaf level gets no similarity term)"
        ),
    )
    epsilon: float = Field(default=PROB_EPSILON, gt=0, lt=0.1)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def apply_variant(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("variant") in LOSS_VARIANTS:
            preset = LOSS_VARIANTS[data["variant"]]
            data = {**preset, **{k: v for k, v in data.items() if v is not None}}
        return data

    def resolved_beta1(self, depth: int) -> float:
        return 2.0**-depth if self.beta1 is None else self.beta1

    def levels(self, depth: int) -> range:
        if self.level_range == "include_leaves":
            return range(1, depth + 1)
        return range(0, depth)


class OutputSpec(BaseModel):
    directory: str = Field(default="runs/default", description="Run artifact directory")
    checkpoint_every: int = Field(default=1, ge=1, description="Epochs between checkpoints")

    model_config = ConfigDict(extra="forbid")


# --------------------------------------------------
# Profiles
# --------------------------------------------------


PROFILES: Dict[str, Dict[str, Any]] = {
    "grayscale": {
        "encoder": {"architecture": "resnet18", "embed_dim": 512},
        "contrast_head": {"mode": "identity"},
        "tree": {"depth": 4, "router": "linear"},
        "schedule": {
            "pretrain_epochs": 200,
            "tree_epochs": 100,
            "prune_start_epoch": 10,
            "target_leaves": 10,
            "batch_size": 256,
        },
    },
    "cifar-like": {
        "encoder": {"architecture": "resnet50", "embed_dim": 2048},
        "contrast_head": {"mode": "two-layer", "output_dim": 128},
        "tree": {"depth": 5, "router": "two-layer"},
        "schedule": {
            "pretrain_epochs": 1000,
            "tree_epochs": 500,
            "prune_start_epoch": 50,
            "target_leaves": 10,
            "batch_size": 512,
        },
    },
    "cifar100-like": {
        "encoder": {"architecture": "resnet50", "embed_dim": 2048},
        "contrast_head": {"mode": "two-layer", "output_dim": 128},
        "tree": {"depth": 5, "router": "two-layer"},
        "schedule": {
            "pretrain_epochs": 1000,
            "tree_epochs": 500,
            "prune_start_epoch": 50,
            "target_leaves": 20,
            "batch_size": 512,
        },
    },
    "imagenet-like": {
        "encoder": {"architecture": "resnet34", "embed_dim": 512},
        "contrast_head": {"mode": "two-layer", "output_dim": 128},
        "tree": {"depth": 4, "router": "two-layer"},
        "schedule": {
            "pretrain_epochs": 1000,
            "tree_epochs": 500,
            "prune_start_epoch": 50,
            "target_leaves": 10,
            "batch_size": 128,
        },
    },
    "desk-scale": {
        "encoder": {"architecture": "mlp-small", "embed_dim": 64},
        "contrast_head": {"mode": "identity"},
        "tree": {"depth": 3, "router": "linear"},
        "schedule": {
            "pretrain_epochs": 30,
            "tree_epochs": 30,
            "prune_start_epoch": 5,
            "target_leaves": 8,
            "batch_size": 128,
        },
    },
    "mnist-subset": {
        "encoder": {"architecture": "cnn-small", "embed_dim": 128},
        "contrast_head": {"mode": "identity"},
        "tree": {"depth": 4, "router": "linear"},
        "schedule": {
            "pretrain_epochs": 40,
            "tree_epochs": 40,
            "prune_start_epoch": 10,
            "target_leaves": 10,
            "batch_size": 256,
        },
    },
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class RunConfig(BaseModel):
    profile: Optional[str] = Field(None, description="Named defaults, see PROFILES")
    dataset: DatasetSpec
    augmentation: Optional[AugmentationPolicy] = Field(
        None, description="Defaults to the per-source policy"
    )
    encoder: EncoderSpec
    contrast_head: ContrastHeadSpec = Field(default_factory=ContrastHeadSpec)
    tree: TreeSpec = Field(default_factory=TreeSpec)
    loss: LossConfig = Field(default_factory=LossConfig)
    schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    output: OutputSpec = Field(default_factory=OutputSpec)
    seed: int = Field(default=0)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def apply_profile(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        profile = data.get("profile")
        if profile is not None:
            if profile not in PROFILES:
                raise ValueError(
                    f"unknown profile '{profile}', expected one of {sorted(PROFILES)}"
                )
            data = _deep_merge(PROFILES[profile], data)
        # one run seed feeds every seeded component unless set explicitly
        seed = data.get("seed", 0)
        for section in ("schedule", "dataset"):
            if isinstance(data.get(section), dict):
                data[section] = {"seed": seed, **data[section]}
            elif section == "schedule" and section not in data:
                data[section] = {"seed": seed}
        return data

    @model_validator(mode="after")
    def validate_cross_fields(self) -> "RunConfig":
        self.schedule.check_depth(self.tree.depth)
        head = self.contrast_head
        if (
            head.mode == "identity"
            and head.output_dim is not None
            and head.output_dim != self.encoder.embed_dim
        ):
            raise ValueError(
                f"identity contrast head needs output_dim == embed_dim "
                f"({head.output_dim} != {self.encoder.embed_dim})"
            )
        if (
            self.dataset.source == "synthetic-gaussians"
            and self.schedule.batch_size > self.dataset.num_samples
        ):
            raise ValueError(
                f"batch_size={self.schedule.batch_size} exceeds "
                f"num_samples={self.dataset.num_samples}"
            )
        if self.dataset.source == "synthetic-gaussians" and self.encoder.architecture != "mlp-small":
            raise ValueError("synthetic vectors need the mlp-small encoder")
        return self

    def resolved_augmentation(self, channels: int) -> AugmentationPolicy:
        if self.augmentation is not None:
            return self.augmentation
        return AugmentationPolicy.default_for(
            self.dataset.source, channels=channels, seed=self.seed
        )
