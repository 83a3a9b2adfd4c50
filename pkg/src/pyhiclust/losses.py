"""
Training objectives.

Loss = CoHiLoss + beta1 * R1 + beta2 * R2, where CoHiLoss contrasts
Bhattacharyya similarities of tree-level posteriors, R1 pushes every
decision node toward a balanced split and R2 is NT-Xent on the contrast
head output.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

from pyhiclust.models.ConfigModels import LossConfig
from pyhiclust.models.TrainingModels import LossBreakdown
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.tree import level_posteriors, node_reach, redirected_probs
from pyhiclust.utils.constants import PROB_EPSILON, SIMILARITY_SUM_TOLERANCE
from pyhiclust.utils.exceptions import InvalidArgumentError, NumericError


TensorLike = Union[torch.Tensor, Sequence[float]]


def _safe_sqrt(p: torch.Tensor, epsilon: float) -> torch.Tensor:
    # sqrt above epsilon, linear below; continuous at epsilon and finite slope at 0
    return torch.where(
        p > epsilon,
        torch.sqrt(p.clamp_min(epsilon)),
        p / math.sqrt(epsilon),
    )


def _as_float_tensor(x: TensorLike) -> torch.Tensor:
    t = torch.as_tensor(x)
    return t if t.is_floating_point() else t.to(torch.float64)


# --------------------------------------------------
# Similarities
# --------------------------------------------------


def level_similarity(
    P: TensorLike,
    Q: TensorLike,
    epsilon: float = PROB_EPSILON,
    validate: bool = True,
) -> torch.Tensor:
    """Bhattacharyya coefficient sum_i sqrt(P_i Q_i) along the last axis."""
    P, Q = _as_float_tensor(P), _as_float_tensor(Q)
    if validate:
        if P.shape != Q.shape:
            raise InvalidArgumentError(
                f"distributions differ in shape: {tuple(P.shape)} vs {tuple(Q.shape)}"
            )
        if bool((P < 0).any() or (Q < 0).any()):
            raise InvalidArgumentError("distributions must be non-negative")
        for name, dist in (("P", P), ("Q", Q)):
            if bool(((dist.sum(-1) - 1).abs() > SIMILARITY_SUM_TOLERANCE).any()):
                raise InvalidArgumentError(f"{name} does not sum to 1")
    return (_safe_sqrt(P, epsilon) * _safe_sqrt(Q, epsilon)).sum(-1)


def _check_routing_pair(a: torch.Tensor, b: torch.Tensor, topo: TreeTopology) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(
            f"routings differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    if a.shape[-1] != topo.num_internal:
        raise InvalidArgumentError(
            f"routing has {a.shape[-1]} node probabilities, topology has "
            f"{topo.num_internal} internal nodes"
        )


def pair_similarity(
    routing_a: TensorLike,
    routing_b: TensorLike,
    topo: TreeTopology,
    config: Optional[LossConfig] = None,
) -> torch.Tensor:
    """s(x_a, x_b): level similarities summed over the configured level range."""
    config = config or LossConfig()
    a, b = _as_float_tensor(routing_a), _as_float_tensor(routing_b)
    _check_routing_pair(a, b, topo)
    levels = list(config.levels(topo.depth))
    pa = level_posteriors(a, topo, levels)
    pb = level_posteriors(b, topo, levels)
    return sum(
        level_similarity(p, q, config.epsilon, validate=False) for p, q in zip(pa, pb)
    )


def similarity_matrix(
    anchor_routing: torch.Tensor,
    view_routing: torch.Tensor,
    topo: TreeTopology,
    config: LossConfig,
) -> torch.Tensor:
    """(N, N) matrix with entry [j, i] = s(x_j, view_i)."""
    levels = list(config.levels(topo.depth))
    pa = level_posteriors(anchor_routing, topo, levels)
    pv = level_posteriors(view_routing, topo, levels)
    eps = config.epsilon
    return sum(_safe_sqrt(a, eps) @ _safe_sqrt(v, eps).T for a, v in zip(pa, pv))


def cohi_loss(
    anchor_routing: torch.Tensor,
    view_routing: torch.Tensor,
    topo: TreeTopology,
    config: Optional[LossConfig] = None,
) -> torch.Tensor:
    """Mean negative (cross) pair similarity minus mean positive pair similarity."""
    config = config or LossConfig()
    anchor_routing = _as_float_tensor(anchor_routing)
    view_routing = _as_float_tensor(view_routing)
    _check_routing_pair(anchor_routing, view_routing, topo)
    if anchor_routing.dim() != 2 or anchor_routing.shape[0] < 2:
        raise InvalidArgumentError("cohi_loss needs a batch of at least 2 pairs")

    n = anchor_routing.shape[0]
    sim = similarity_matrix(anchor_routing, view_routing, topo, config)
    positives = torch.diagonal(sim)
    negative_mean = (sim.sum() - positives.sum()) / (n * (n - 1))
    return negative_mean - positives.mean()


# --------------------------------------------------
# Regularizers
# --------------------------------------------------


def r1_balance(
    anchor_routing: torch.Tensor,
    view_routing: Optional[torch.Tensor],
    topo: TreeTopology,
    epsilon: float = PROB_EPSILON,
) -> torch.Tensor:
    """
    Sum over decision nodes of the cross-entropy between [0.5, 0.5] and the
    reach-weighted batch mean of the node's left-edge probability.

    Nodes no sample can reach contribute 0. A pass-through node left with one
    active side after pruning routes everything one way, so it adds a
    constant with no gradient.
    """
    probs = _as_float_tensor(anchor_routing)
    if probs.dim() == 1:
        probs = probs.unsqueeze(0)
    if view_routing is not None:
        probs = torch.cat([probs, _as_float_tensor(view_routing).reshape(-1, probs.shape[1])])
    if probs.shape[0] < 1:
        raise InvalidArgumentError("r1_balance needs at least one sample")

    reach = node_reach(probs, topo)
    left = redirected_probs(probs, topo)
    mass = reach.sum(0)
    alpha = (reach * left).sum(0) / mass.clamp_min(torch.finfo(mass.dtype).tiny)
    alpha = alpha.clamp(epsilon, 1 - epsilon)
    cross_entropy = -0.5 * (torch.log(alpha) + torch.log1p(-alpha))

    keep = mass > 0
    return torch.where(keep, cross_entropy, torch.zeros_like(cross_entropy)).sum()


def ntxent(
    anchor_embed: torch.Tensor,
    view_embed: torch.Tensor,
    temperature: float = 0.5,
) -> torch.Tensor:
    """NT-Xent over 2N embeddings; the positive of row j is its pair partner."""
    if temperature <= 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    anchor_embed = _as_float_tensor(anchor_embed)
    view_embed = _as_float_tensor(view_embed)
    if anchor_embed.shape != view_embed.shape or anchor_embed.dim() != 2:
        raise InvalidArgumentError(
            f"embeddings must be paired (N, M) tensors, got {tuple(anchor_embed.shape)} "
            f"and {tuple(view_embed.shape)}"
        )
    n = anchor_embed.shape[0]
    if n < 2:
        raise InvalidArgumentError("ntxent needs at least 2 pairs")

    z = torch.cat([anchor_embed, view_embed])
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms <= 1e-12).any()):
        raise NumericError("zero-norm embedding: cosine similarity undefined")
    z = z / norms

    logits = (z @ z.T) / temperature
    self_mask = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    targets = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)]).to(z.device)
    return F.cross_entropy(logits, targets)


# --------------------------------------------------
# Total
# --------------------------------------------------


@dataclass
class PairOutputs:
    """Model outputs for the anchors and views of one pair batch."""

    anchor_routing: torch.Tensor
    view_routing: torch.Tensor
    anchor_embed: torch.Tensor
    view_embed: torch.Tensor


@dataclass
class LossTerms:
    cohi: torch.Tensor
    r1: torch.Tensor
    r2: torch.Tensor
    beta1: float
    beta2: float

    @property
    def total(self) -> torch.Tensor:
        return self.cohi + self.beta1 * self.r1 + self.beta2 * self.r2

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown.compose(
            cohi=float(self.cohi.detach()),
            r1=float(self.r1.detach()),
            r2=float(self.r2.detach()),
            beta1=self.beta1,
            beta2=self.beta2,
        )


def total_loss(
    outputs: PairOutputs,
    topo: TreeTopology,
    config: Optional[LossConfig] = None,
) -> LossTerms:
    config = config or LossConfig()
    cohi = cohi_loss(outputs.anchor_routing, outputs.view_routing, topo, config)
    r1 = r1_balance(outputs.anchor_routing, outputs.view_routing, topo, config.epsilon)
    r2 = ntxent(outputs.anchor_embed, outputs.view_embed, config.ntxent_temperature)
    return LossTerms(
        cohi=cohi,
        r1=r1,
        r2=r2,
        beta1=config.resolved_beta1(topo.depth),
        beta2=config.beta2,
    )
