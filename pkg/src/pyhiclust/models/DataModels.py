from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import torch
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)


# --------------------------------------------------
# Dataset
# --------------------------------------------------


class DatasetSpec(BaseModel):
    source: Literal["synthetic-gaussians", "idx-grayscale", "image-folder"] = Field(
        ..., description="Where samples come from"
    )
    path: Optional[str] = Field(
        None, description="IDX image file or image-folder root (file sources only)"
    )
    labels_path: Optional[str] = Field(
        None, description="IDX label file matching `path` (idx-grayscale only)"
    )

    # synthetic-gaussians
    num_samples: int = Field(default=1000, ge=2, description="Synthetic sample count")
    num_components: int = Field(default=4, ge=1, description="Gaussian components")
    dim: int = Field(default=16, ge=1, description="Synthetic dimensionality D")
    separation: float = Field(
        default=10.0, gt=0, description="Std of the component centres"
    )
    component_std: float = Field(default=1.0, gt=0, description="Per-component std")

    # image sources
    image_size: int = Field(default=32, ge=8, description="Image-folder resize edge")
    max_samples: Optional[int] = Field(
        None, ge=2, description="Keep only the first N samples after shuffling"
    )

    split_policy: Literal["train+test"] = Field(
        default="train+test",
        description="Clustering is transductive: every sample is trained and scored",
    )
    seed: int = Field(default=0, description="Generator / subset seed")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def validate_paths(self) -> "DatasetSpec":
        if self.source == "synthetic-gaussians":
            return self
        if not self.path:
            raise ValueError(f"path is required for source '{self.source}'")
        if not Path(self.path).exists():
            raise ValueError(f"path does not exist: {self.path}")
        if self.source == "image-folder" and not Path(self.path).is_dir():
            raise ValueError(f"image-folder path must be a directory: {self.path}")
        if self.labels_path is not None:
            if self.source != "idx-grayscale":
                raise ValueError("labels_path only applies to idx-grayscale")
            if not Path(self.labels_path).exists():
                raise ValueError(f"labels_path does not exist: {self.labels_path}")
        return self


# --------------------------------------------------
# Augmentations
# --------------------------------------------------


class IdentityTransform(BaseModel):
    kind: Literal["identity"] = "identity"


class GaussianNoiseTransform(BaseModel):
    kind: Literal["gaussian-noise"] = "gaussian-noise"
    scale: float = Field(
        default=0.1, ge=0, description="Noise std as a fraction of per-dimension std"
    )


class ResizedCropTransform(BaseModel):
    kind: Literal["random-resized-crop"] = "random-resized-crop"
    scale_min: float = Field(default=0.8, gt=0, le=1)
    scale_max: float = Field(default=1.0, gt=0, le=1)
    ratio_min: float = Field(default=3 / 4, gt=0)
    ratio_max: float = Field(default=4 / 3, gt=0)

    @model_validator(mode="after")
    def validate_ranges(self) -> "ResizedCropTransform":
        if self.scale_min > self.scale_max or self.ratio_min > self.ratio_max:
            raise ValueError("crop ranges must satisfy min <= max")
        return self


class RotationTransform(BaseModel):
    kind: Literal["random-rotation"] = "random-rotation"
    degrees: float = Field(default=15.0, ge=0, le=180)


class HorizontalFlipTransform(BaseModel):
    kind: Literal["horizontal-flip"] = "horizontal-flip"
    p: float = Field(default=0.5, ge=0, le=1)


class ColorJitterTransform(BaseModel):
    kind: Literal["color-jitter"] = "color-jitter"
    brightness: float = Field(default=0.4, ge=0)
    contrast: float = Field(default=0.4, ge=0)
    saturation: float = Field(default=0.4, ge=0)
    hue: float = Field(default=0.1, ge=0, le=0.5)
    p: float = Field(default=0.8, ge=0, le=1)


class GrayscaleTransform(BaseModel):
    kind: Literal["random-grayscale"] = "random-grayscale"
    p: float = Field(default=0.2, ge=0, le=1)


TransformSpec = Annotated[
    Union[
        IdentityTransform,
        GaussianNoiseTransform,
        ResizedCropTransform,
        RotationTransform,
        HorizontalFlipTransform,
        ColorJitterTransform,
        GrayscaleTransform,
    ],
    Field(discriminator="kind"),
]

IMAGE_ONLY_KINDS = {
    "random-resized-crop",
    "random-rotation",
    "horizontal-flip",
    "color-jitter",
    "random-grayscale",
}


class AugmentationPolicy(BaseModel):
    """Ordered stochastic transforms, applied independently to build each view."""

    transforms: List[TransformSpec] = Field(default_factory=list)
    seed: int = Field(default=0, description="Base seed for view generation")

    model_config = ConfigDict(extra="forbid")

    @property
    def is_identity(self) -> bool:
        return all(t.kind == "identity" for t in self.transforms)

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentationPolicy":
        return cls(transforms=[IdentityTransform()], seed=seed)

    @classmethod
    def default_for(cls, source: str, channels: int = 1, seed: int = 0):
        """Default policy per data source."""
        if source == "synthetic-gaussians":
            transforms = [GaussianNoiseTransform(scale=0.1)]
        elif channels == 1:
            transforms = [
                ResizedCropTransform(scale_min=0.8, scale_max=1.0),
                RotationTransform(degrees=15.0),
            ]
        else:
            transforms = [
                ResizedCropTransform(scale_min=0.2, scale_max=1.0),
                HorizontalFlipTransform(p=0.5),
                ColorJitterTransform(),
                GrayscaleTransform(p=0.2),
            ]
        return cls(transforms=transforms, seed=seed)


# --------------------------------------------------
# Pair batches
# --------------------------------------------------


class PairBatch(BaseModel):
    anchors: torch.Tensor
    views: torch.Tensor
    indices: torch.Tensor = Field(..., description="Dataset rows of the anchors")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("indices")
    @classmethod
    def validate_indices(cls, v: torch.Tensor):
        if v.dim() != 1:
            raise ValueError("indices must be 1-D")
        return v

    @model_validator(mode="after")
    def validate_pairing(self) -> "PairBatch":
        if self.anchors.shape != self.views.shape:
            raise ValueError(
                f"anchors {tuple(self.anchors.shape)} and views "
                f"{tuple(self.views.shape)} must have the same shape"
            )
        if self.anchors.shape[0] < 2:
            raise ValueError("a pair batch needs at least 2 anchors")
        if self.indices.shape[0] != self.anchors.shape[0]:
            raise ValueError("one index per anchor is required")
        return self

    @property
    def size(self) -> int:
        return self.anchors.shape[0]
