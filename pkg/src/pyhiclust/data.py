"""
Dataset ingestion and positive-pair generation.

Training code only ever sees `UnlabeledDataset`; labels stay on
`LabeledDataset` for evaluation.
"""

import gzip
import math
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torchvision import datasets as tv_datasets
from torchvision.transforms import v2 as transforms
from torchvision.transforms.v2 import functional as TF

from pyhiclust import logger
from pyhiclust.models.DataModels import (
    IMAGE_ONLY_KINDS,
    AugmentationPolicy,
    DatasetSpec,
    PairBatch,
)
from pyhiclust.utils.constants import IDX_DTYPES
from pyhiclust.utils.exceptions import ConfigError, InvalidArgumentError, ParseError


# --------------------------------------------------
# Dataset handles
# --------------------------------------------------


class UnlabeledDataset:
    """Inputs only. This is what training operations receive."""

    def __init__(self, inputs: torch.Tensor):
        if inputs.shape[0] == 0:
            raise InvalidArgumentError("dataset is empty")
        self.inputs = inputs
        self._feature_std: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    @property
    def channels(self) -> int:
        return self.input_shape[0] if len(self.input_shape) == 3 else 1

    @property
    def feature_std(self) -> torch.Tensor:
        """Per-dimension std, used to scale additive noise."""
        if self._feature_std is None:
            std = self.inputs.std(dim=0, correction=0) if len(self) > 1 else None
            self._feature_std = (
                torch.ones(self.input_shape, dtype=self.inputs.dtype) if std is None else std
            )
        return self._feature_std


class LabeledDataset(UnlabeledDataset):
    def __init__(
        self,
        inputs: torch.Tensor,
        labels: Optional[np.ndarray],
        class_names: Sequence[str],
        source: str,
    ):
        super().__init__(inputs)
        if labels is not None and len(labels) != inputs.shape[0]:
            raise InvalidArgumentError(
                f"{len(labels)} labels for {inputs.shape[0]} samples"
            )
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.class_names = list(class_names)
        self.source = source

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def __iter__(self) -> Iterator[Tuple[torch.Tensor, Optional[int]]]:
        for i in range(len(self)):
            yield self.inputs[i], None if self.labels is None else int(self.labels[i])

    def unlabeled(self) -> UnlabeledDataset:
        view = UnlabeledDataset(self.inputs)
        view._feature_std = self._feature_std
        return view


# --------------------------------------------------
# IDX files
# --------------------------------------------------


def read_idx(path: Union[str, Path]) -> np.ndarray:
    """Parse an IDX file (optionally gzipped): magic, big-endian dims, raw data."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            data = fh.read()
    except (OSError, EOFError) as exc:
        raise ParseError(f"cannot read IDX file {path}: {exc}") from exc

    if len(data) < 4:
        raise ParseError(f"{path}: truncated IDX header", offset=len(data))
    if data[0] != 0 or data[1] != 0:
        raise ParseError(f"{path}: bad IDX magic, first two bytes must be zero", offset=0)
    if data[2] not in IDX_DTYPES:
        raise ParseError(f"{path}: unknown IDX element type 0x{data[2]:02x}", offset=2)
    ndim = data[3]
    if ndim == 0:
        raise ParseError(f"{path}: IDX file declares zero dimensions", offset=3)

    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise ParseError(f"{path}: truncated IDX dimension list", offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = np.dtype(IDX_DTYPES[data[2]])
    count = math.prod(dims)
    available = len(data) - header_end
    if available != count * dtype.itemsize:
        raise ParseError(
            f"{path}: expected {count * dtype.itemsize} data bytes for dims {dims}, "
            f"found {available}",
            offset=header_end + min(available, count * dtype.itemsize),
        )
    array = np.frombuffer(data, dtype=dtype, count=count, offset=header_end)
    return array.reshape(dims).astype(dtype.newbyteorder("="))


# --------------------------------------------------
# Loading
# --------------------------------------------------


def _synthetic_gaussians(spec: DatasetSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.separation, size=(spec.num_components, spec.dim))
    labels = np.arange(spec.num_samples) % spec.num_components
    rng.shuffle(labels)
    points = centers[labels] + rng.normal(
        0.0, spec.component_std, size=(spec.num_samples, spec.dim)
    )
    names = [f"component-{k}" for k in range(spec.num_components)]
    return LabeledDataset(
        torch.from_numpy(points.astype(np.float32)), labels, names, spec.source
    )


def _idx_grayscale(spec: DatasetSpec) -> LabeledDataset:
    images = read_idx(spec.path)
    if images.ndim == 2:
        side = int(math.isqrt(images.shape[1]))
        if side * side != images.shape[1]:
            raise ParseError(f"{spec.path}: rows of {images.shape[1]} values are not square images")
        images = images.reshape(-1, side, side)
    if images.ndim != 3:
        raise ParseError(f"{spec.path}: expected (n, H, W) images, got dims {images.shape}")

    inputs = torch.from_numpy(images.astype(np.float32))
    if images.dtype == np.uint8:
        inputs = inputs / 255.0
    inputs = inputs.unsqueeze(1)

    labels, names = None, []
    if spec.labels_path:
        labels = read_idx(spec.labels_path).astype(np.int64).reshape(-1)
        if len(labels) != len(inputs):
            raise InvalidArgumentError(
                f"{spec.labels_path} has {len(labels)} labels for {len(inputs)} images"
            )
        names = [str(c) for c in range(int(labels.max()) + 1)] if len(labels) else []
    return LabeledDataset(inputs, labels, names, spec.source)


def _image_folder(spec: DatasetSpec) -> LabeledDataset:
    pipeline = transforms.Compose(
        [
            transforms.Resize(spec.image_size),
            transforms.CenterCrop(spec.image_size),
            transforms.ToImage(),
            transforms.ToDtype(torch.float32, scale=True),
        ]
    )
    try:
        folder = tv_datasets.ImageFolder(spec.path, transform=pipeline)
    except FileNotFoundError as exc:
        raise InvalidArgumentError(f"{spec.path}: {exc}") from exc
    if len(folder) == 0:
        raise InvalidArgumentError(f"{spec.path}: no images found")
    samples = [folder[i] for i in range(len(folder))]
    inputs = torch.stack([img.as_subclass(torch.Tensor) for img, _ in samples])
    labels = np.asarray([label for _, label in samples], dtype=np.int64)
    return LabeledDataset(inputs, labels, folder.classes, spec.source)


_LOADERS = {
    "synthetic-gaussians": _synthetic_gaussians,
    "idx-grayscale": _idx_grayscale,
    "image-folder": _image_folder,
}


def load_dataset(spec: DatasetSpec) -> LabeledDataset:
    dataset = _LOADERS[spec.source](spec)
    if spec.max_samples is not None and spec.max_samples < len(dataset):
        rng = np.random.default_rng(spec.seed)
        keep = np.sort(rng.permutation(len(dataset))[: spec.max_samples])
        dataset = LabeledDataset(
            dataset.inputs[torch.from_numpy(keep)],
            None if dataset.labels is None else dataset.labels[keep],
            dataset.class_names,
            dataset.source,
        )
    logger.info(
        "Loaded dataset | source=%s | samples=%s | shape=%s | classes=%s",
        spec.source,
        len(dataset),
        dataset.input_shape,
        len(dataset.class_names),
    )
    return dataset


# --------------------------------------------------
# Views
# --------------------------------------------------


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) % 2**64 for p in parts]).generate_state(1)[0])


def _uniform(g: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * torch.rand((), generator=g, dtype=torch.float64).item()


class ViewGenerator:
    """
    Applies an AugmentationPolicy with an explicit torch.Generator, so views
    are reproducible per batch seed and safe to build from worker threads.
    """

    def __init__(self, policy: AugmentationPolicy, dataset: UnlabeledDataset):
        self.policy = policy
        self.input_shape = dataset.input_shape
        self.is_image = len(self.input_shape) == 3
        for spec in policy.transforms:
            if spec.kind in IMAGE_ONLY_KINDS and not self.is_image:
                raise ConfigError(
                    f"transform '{spec.kind}' needs image inputs, data shape is "
                    f"{self.input_shape}",
                    "augmentation.transforms",
                )
        self.noise_std = dataset.feature_std

    def __call__(self, anchors: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        views = anchors.clone()
        for spec in self.policy.transforms:
            if spec.kind == "identity":
                continue
            if spec.kind == "gaussian-noise":
                noise = torch.randn(views.shape, generator=generator, dtype=views.dtype)
                views = views + spec.scale * self.noise_std * noise
                continue
            views = torch.stack([self._apply_image(spec, img, generator) for img in views])
        return views

    def _apply_image(self, spec, img: torch.Tensor, g: torch.Generator) -> torch.Tensor:
        channels, height, width = img.shape
        if spec.kind == "random-resized-crop":
            top, left, h, w = self._crop_params(spec, height, width, g)
            return TF.resized_crop(img, top, left, h, w, [height, width], antialias=True)
        if spec.kind == "random-rotation":
            return TF.rotate(img, _uniform(g, -spec.degrees, spec.degrees))
        if spec.kind == "horizontal-flip":
            return TF.horizontal_flip(img) if _uniform(g, 0, 1) < spec.p else img
        if spec.kind == "random-grayscale":
            if channels == 3 and _uniform(g, 0, 1) < spec.p:
                return TF.rgb_to_grayscale(img, num_output_channels=3)
            return img
        if spec.kind == "color-jitter":
            if _uniform(g, 0, 1) >= spec.p:
                return img
            return self._color_jitter(spec, img, g)
        raise ConfigError(f"unknown transform '{spec.kind}'", "augmentation.transforms")

    @staticmethod
    def _crop_params(spec, height: int, width: int, g: torch.Generator):
        area = height * width
        log_low, log_high = math.log(spec.ratio_min), math.log(spec.ratio_max)
        for _ in range(10):
            target = area * _uniform(g, spec.scale_min, spec.scale_max)
            ratio = math.exp(_uniform(g, log_low, log_high))
            w = int(round(math.sqrt(target * ratio)))
            h = int(round(math.sqrt(target / ratio)))
            if 0 < w <= width and 0 < h <= height:
                top = int(torch.randint(0, height - h + 1, (), generator=g))
                left = int(torch.randint(0, width - w + 1, (), generator=g))
                return top, left, h, w
        return 0, 0, height, width

    @staticmethod
    def _color_jitter(spec, img: torch.Tensor, g: torch.Generator) -> torch.Tensor:
        order = torch.randperm(4, generator=g).tolist()
        for op in order:
            if op == 0 and spec.brightness > 0:
                factor = _uniform(g, max(0.0, 1 - spec.brightness), 1 + spec.brightness)
                img = TF.adjust_brightness(img, factor)
            elif op == 1 and spec.contrast > 0:
                factor = _uniform(g, max(0.0, 1 - spec.contrast), 1 + spec.contrast)
                img = TF.adjust_contrast(img, factor)
            elif op == 2 and spec.saturation > 0 and img.shape[0] == 3:
                factor = _uniform(g, max(0.0, 1 - spec.saturation), 1 + spec.saturation)
                img = TF.adjust_saturation(img, factor)
            elif op == 3 and spec.hue > 0 and img.shape[0] == 3:
                img = TF.adjust_hue(img, _uniform(g, -spec.hue, spec.hue))
        return img


# --------------------------------------------------
# Pair batches
# --------------------------------------------------


def _build_batch(
    dataset: UnlabeledDataset, views: ViewGenerator, indices: torch.Tensor, seed: int
) -> PairBatch:
    g = torch.Generator().manual_seed(derive_seed(seed, views.policy.seed))
    anchors = dataset.inputs[indices]
    return PairBatch(anchors=anchors, views=views(anchors, g), indices=indices)


def make_pair_batch(
    dataset: UnlabeledDataset,
    views: Union[ViewGenerator, AugmentationPolicy],
    batch_size: int,
    seed: int,
) -> PairBatch:
    """N anchors drawn without replacement plus one independent view of each."""
    if isinstance(views, AugmentationPolicy):
        views = ViewGenerator(views, dataset)
    if batch_size > len(dataset):
        raise InvalidArgumentError(
            f"batch size {batch_size} exceeds dataset size {len(dataset)}"
        )
    if batch_size < 2:
        raise InvalidArgumentError("batch size must be at least 2")
    g = torch.Generator().manual_seed(seed)
    indices = torch.randperm(len(dataset), generator=g)[:batch_size]
    return _build_batch(dataset, views, indices, derive_seed(seed, 1))


class PairBatchStream:
    """
    One epoch of pair batches in a fixed order.

    The batch plan and every batch's view seed come from (seed, epoch,
    batch index) only; worker threads just materialize them ahead of time,
    so the output does not depend on scheduling.
    """

    def __init__(
        self,
        dataset: UnlabeledDataset,
        views: ViewGenerator,
        batch_size: int,
        seed: int,
        epoch: int,
        num_workers: int = 0,
        lookahead: int = 4,
    ):
        if batch_size > len(dataset):
            raise InvalidArgumentError(
                f"batch size {batch_size} exceeds dataset size {len(dataset)}"
            )
        self.dataset = dataset
        self.views = views
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = epoch
        self.num_workers = num_workers
        self.lookahead = max(1, lookahead)

    def plan(self) -> List[Tuple[torch.Tensor, int]]:
        g = torch.Generator().manual_seed(derive_seed(self.seed, self.epoch))
        order = torch.randperm(len(self.dataset), generator=g)
        chunks = [c for c in torch.split(order, self.batch_size) if c.numel() >= 2]
        return [
            (chunk, derive_seed(self.seed, self.epoch, b)) for b, chunk in enumerate(chunks)
        ]

    def __len__(self) -> int:
        return len(self.plan())

    def __iter__(self) -> Iterator[PairBatch]:
        plan = self.plan()
        if self.num_workers == 0:
            for indices, seed in plan:
                yield _build_batch(self.dataset, self.views, indices, seed)
            return

        with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
            pending = deque()
            queued = 0
            while queued < len(plan) or pending:
                while queued < len(plan) and len(pending) < self.lookahead:
                    indices, seed = plan[queued]
                    pending.append(
                        pool.submit(_build_batch, self.dataset, self.views, indices, seed)
                    )
                    queued += 1
                yield pending.popleft().result()
