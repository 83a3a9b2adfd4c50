"""
Encoder g, router head pi and contrast head phi.

`leaf_posterior(route(encode(x)))` is the only path from inputs to cluster
probabilities; the tree itself has no parameters.
"""

import math
from typing import Callable, Dict, Optional, Tuple, Union

import torch
import torch.nn as nn
from torchvision import models as tv_models

from pyhiclust import logger
from pyhiclust.models.ConfigModels import ContrastHeadSpec, EncoderSpec
from pyhiclust.utils.constants import LOGIT_CLAMP
from pyhiclust.utils.exceptions import ConfigError, InvalidArgumentError, NumericError


# --------------------------------------------------
# Encoders
# --------------------------------------------------


class MLPSmall(nn.Module):
    """Two hidden layers for vector data."""

    def __init__(self, input_dim: int, embed_dim: int, hidden_width: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Flatten(),
            nn.Linear(input_dim, hidden_width),
            nn.ReLU(),
            nn.Linear(hidden_width, hidden_width),
            nn.ReLU(),
            nn.Linear(hidden_width, embed_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )


class CNNSmall(nn.Module):
    """Three conv blocks sized for 28x28 grayscale; works for any (C, H, W)."""

    def __init__(self, channels: int, embed_dim: int):
        super().__init__()
        self.features = nn.Sequential(
            _conv_block(channels, 32),
            _conv_block(32, 64),
            _conv_block(64, 128),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.fc = nn.Linear(128, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))


_RESNETS: Dict[str, Callable[..., tv_models.ResNet]] = {
    "resnet18": tv_models.resnet18,
    "resnet34": tv_models.resnet34,
    "resnet50": tv_models.resnet50,
}


def build_resnet(architecture: str, channels: int, embed_dim: int) -> tv_models.ResNet:
    # small-image stem: 3x3 conv, stride 1, no max-pool
    net = _RESNETS[architecture](weights=None)
    net.conv1 = nn.Conv2d(channels, 64, kernel_size=3, stride=1, padding=1, bias=False)
    net.maxpool = nn.Identity()
    features = net.fc.in_features
    net.fc = nn.Identity() if features == embed_dim else nn.Linear(features, embed_dim)
    return net


def build_encoder(spec: EncoderSpec) -> nn.Module:
    if spec.input_shape is None:
        raise ConfigError("input_shape must be known to build an encoder", "encoder.input_shape")
    if spec.architecture == "mlp-small":
        return MLPSmall(math.prod(spec.input_shape), spec.embed_dim, spec.hidden_width)
    channels = spec.input_shape[0]
    if spec.architecture == "cnn-small":
        return CNNSmall(channels, spec.embed_dim)
    return build_resnet(spec.architecture, channels, spec.embed_dim)


# --------------------------------------------------
# Heads
# --------------------------------------------------


class RouterHead(nn.Module):
    """
    One output neuron per internal node: neuron n = 2^t + i (1-based) gives
    the left-edge probability of node (t, i).
    """

    def __init__(
        self,
        embed_dim: int,
        depth: int,
        mode: str = "linear",
        logit_clamp: float = LOGIT_CLAMP,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.depth = depth
        self.num_internal = 2**depth - 1
        self.logit_clamp = logit_clamp
        if mode == "two-layer":
            self.hidden = nn.Sequential(nn.Linear(embed_dim, embed_dim), nn.ReLU())
        elif mode == "linear":
            self.hidden = nn.Identity()
        else:
            raise ConfigError(f"unknown router mode '{mode}'", "tree.router")
        self.output = nn.Linear(embed_dim, self.num_internal)
        # near-uniform routing at start
        nn.init.normal_(self.output.weight, mean=0.0, std=1.0 / math.sqrt(embed_dim))
        nn.init.zeros_(self.output.bias)

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        raw = self.output(self.hidden(z))
        return raw.clamp(-self.logit_clamp, self.logit_clamp)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(z))


class ContrastHead(nn.Module):
    def __init__(self, embed_dim: int, spec: Optional[ContrastHeadSpec] = None):
        super().__init__()
        spec = spec or ContrastHeadSpec()
        self.mode = spec.mode
        if spec.mode == "identity":
            if spec.output_dim is not None and spec.output_dim != embed_dim:
                raise ConfigError(
                    f"identity head needs output_dim == embed_dim "
                    f"({spec.output_dim} != {embed_dim})",
                    "contrast_head.output_dim",
                )
            self.output_dim = embed_dim
            self.net = nn.Identity()
        else:
            hidden = spec.hidden_dim or embed_dim
            self.output_dim = spec.output_dim or 128
            self.net = nn.Sequential(
                nn.Linear(embed_dim, hidden),
                nn.ReLU(),
                nn.Linear(hidden, self.output_dim),
            )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


# --------------------------------------------------
# Operations
# --------------------------------------------------


def _check_embeddings(z: torch.Tensor, embed_dim: int, what: str) -> None:
    if z.dim() != 2 or z.shape[1] != embed_dim:
        raise InvalidArgumentError(
            f"{what} expects embeddings of shape (batch, {embed_dim}), got {tuple(z.shape)}"
        )


def encode(encoder: nn.Module, x: torch.Tensor, input_shape: Tuple[int, ...]) -> torch.Tensor:
    if tuple(x.shape[1:]) != tuple(input_shape):
        raise InvalidArgumentError(
            f"inputs must have shape (batch, {', '.join(map(str, input_shape))}), "
            f"got {tuple(x.shape)}"
        )
    z = encoder(x)
    if not bool(torch.isfinite(z).all()):
        raise NumericError("encoder produced non-finite embeddings")
    return z


def route(z: torch.Tensor, router: RouterHead) -> torch.Tensor:
    _check_embeddings(z, router.embed_dim, "router")
    return router(z)


def contrast_embed(z: torch.Tensor, head: ContrastHead, embed_dim: int) -> torch.Tensor:
    _check_embeddings(z, embed_dim, "contrast head")
    return head(z)


class HierarchyNet(nn.Module):
    """Encoder plus both heads; the tree topology lives with the training state."""

    def __init__(
        self,
        encoder_spec: EncoderSpec,
        depth: int,
        router_mode: str = "linear",
        head_spec: Optional[ContrastHeadSpec] = None,
    ):
        super().__init__()
        if encoder_spec.input_shape is None:
            raise ConfigError("input_shape must be known", "encoder.input_shape")
        self.encoder_spec = encoder_spec
        self.input_shape = tuple(encoder_spec.input_shape)
        self.embed_dim = encoder_spec.embed_dim
        self.depth = depth
        self.router_mode = router_mode
        self.head_spec = head_spec or ContrastHeadSpec()
        self.encoder = build_encoder(encoder_spec)
        self.router = RouterHead(self.embed_dim, depth, mode=router_mode)
        self.contrast_head = ContrastHead(self.embed_dim, self.head_spec)

    @classmethod
    def build(
        cls,
        encoder_spec: EncoderSpec,
        depth: int,
        router_mode: str = "linear",
        head_spec: Optional[ContrastHeadSpec] = None,
        seed: int = 0,
    ) -> "HierarchyNet":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            net = cls(encoder_spec, depth, router_mode, head_spec)
        logger.debug(
            "Built HierarchyNet | arch=%s | N=%s | T=%s | params=%s",
            encoder_spec.architecture,
            encoder_spec.embed_dim,
            depth,
            sum(p.numel() for p in net.parameters()),
        )
        return net

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return encode(self.encoder, x, self.input_shape)

    def route(self, z: torch.Tensor) -> torch.Tensor:
        return route(z, self.router)

    def contrast_embed(self, z: torch.Tensor) -> torch.Tensor:
        return contrast_embed(z, self.contrast_head, self.embed_dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Edge probabilities (batch, K) and contrast embeddings (batch, M)."""
        z = self.encode(x)
        return self.route(z), self.contrast_embed(z)

    def pretrain_parameters(self):
        """Parameters trained during pre-training (router excluded)."""
        yield from self.encoder.parameters()
        yield from self.contrast_head.parameters()


@torch.no_grad()
def infer_routing(
    model: HierarchyNet,
    inputs: torch.Tensor,
    device: Union[str, torch.device] = "cpu",
    batch_size: int = 1024,
) -> torch.Tensor:
    """
    Router output for a whole dataset in eval mode, as float64 on the CPU.

    The model's train/eval mode is restored afterwards.
    """
    was_training = model.training
    model.eval()
    try:
        chunks = [
            model.route(model.encode(chunk.to(device))).double().cpu()
            for chunk in torch.split(inputs, batch_size)
        ]
    finally:
        model.train(was_training)
    return torch.cat(chunks) if chunks else torch.empty(0, 2**model.depth - 1, dtype=torch.float64)
