"""
Soft binary tree mathematics.

Node (t, i) sits at level t (root = level 0, leaves = level T) with index
0 <= i < 2^t. Its left child is (t+1, 2i) and its right child (t+1, 2i+1).
Edge probabilities are passed as a (batch, K) tensor whose column n-1 holds
the left-edge probability of the node parameterized by neuron n = 2^t + i.

Every function here is pure: no module state, tensors in, tensors out.
"""

from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from pyhiclust.models.TreeModels import PathCode, TreeTopology
from pyhiclust.utils.exceptions import (
    InvalidArgumentError,
    InvalidStateError,
    InvariantError,
)


ArrayLike = Union[torch.Tensor, np.ndarray, Sequence[float]]


def node_index(level: int, path: Union[PathCode, Sequence[int]]) -> int:
    """b_t(y): the first `level` decisions read as a binary number."""
    decisions = path.decisions if isinstance(path, PathCode) else tuple(path)
    if level < 0:
        raise InvalidArgumentError(f"level must be >= 0, got {level}")
    if len(decisions) < level:
        raise InvalidArgumentError(
            f"path has {len(decisions)} decisions, level {level} needs {level}"
        )
    index = 0
    for bit in decisions[:level]:
        if bit not in (0, 1):
            raise InvalidArgumentError(f"decision bits must be 0 or 1, got {bit}")
        index = 2 * index + bit
    return index


# --------------------------------------------------
# Active-node masks
# --------------------------------------------------


@lru_cache(maxsize=256)
def _active_node_masks(depth: int, mask: Tuple[bool, ...]) -> Tuple[np.ndarray, ...]:
    levels = [np.asarray(mask, dtype=bool)]
    for _ in range(depth):
        child = levels[0]
        levels.insert(0, child[0::2] | child[1::2])
    return tuple(levels)


def active_nodes(topo: TreeTopology) -> List[np.ndarray]:
    """Per level 0..T, which nodes still have an active leaf below them."""
    return [m.copy() for m in _active_node_masks(topo.depth, topo.active_leaf_mask)]


@lru_cache(maxsize=256)
def _redirect_masks(depth: int, mask: Tuple[bool, ...]) -> Tuple[np.ndarray, np.ndarray]:
    levels = _active_node_masks(depth, mask)
    force_left, force_right = [], []
    for t in range(depth):
        left = levels[t + 1][0::2]
        right = levels[t + 1][1::2]
        force_left.append(left & ~right)
        force_right.append(right & ~left)
    return np.concatenate(force_left), np.concatenate(force_right)


def redirected_probs(edge_left_prob: torch.Tensor, topo: TreeTopology) -> torch.Tensor:
    """
    Apply pruning to raw left-edge probabilities.

    An edge into a subtree without active leaves carries 0 and its sibling
    edge carries 1. Redirected entries are constants, so they pass no
    gradient back to the router.
    """
    if topo.num_active == topo.num_leaves:
        return edge_left_prob
    force_left, force_right = _redirect_masks(topo.depth, topo.active_leaf_mask)
    device = edge_left_prob.device
    force_left_t = torch.as_tensor(force_left, device=device)
    force_right_t = torch.as_tensor(force_right, device=device)
    ones = torch.ones_like(edge_left_prob)
    zeros = torch.zeros_like(edge_left_prob)
    out = torch.where(force_left_t, ones, edge_left_prob)
    return torch.where(force_right_t, zeros, out)


# --------------------------------------------------
# Posteriors
# --------------------------------------------------


def _as_batch(edge_left_prob: ArrayLike, topo: TreeTopology) -> Tuple[torch.Tensor, bool]:
    probs = torch.as_tensor(edge_left_prob)
    if not probs.is_floating_point():
        probs = probs.to(torch.get_default_dtype())
    single = probs.dim() == 1
    if single:
        probs = probs.unsqueeze(0)
    if probs.dim() != 2 or probs.shape[1] != topo.num_internal:
        raise InvalidArgumentError(
            f"expected {topo.num_internal} edge probabilities per sample, "
            f"got shape {tuple(probs.shape)}"
        )
    if bool(torch.any(torch.isnan(probs) | (probs < 0) | (probs > 1))):
        raise InvalidArgumentError("edge probabilities must lie in [0, 1]")
    return probs, single


def level_posteriors(
    edge_left_prob: ArrayLike,
    topo: TreeTopology,
    levels: Optional[Iterable[int]] = None,
) -> List[torch.Tensor]:
    """
    P_t(x) for each requested level (default: all levels 0..T).

    Returns one tensor per level, in the order requested, shaped
    (batch, 2^t), or (2^t,) when a single sample was passed.
    """
    probs, single = _as_batch(edge_left_prob, topo)
    wanted = list(range(topo.depth + 1)) if levels is None else list(levels)
    for level in wanted:
        if not 0 <= level <= topo.depth:
            raise InvalidArgumentError(
                f"level {level} outside [0, {topo.depth}]"
            )
    deepest = max(wanted) if wanted else 0

    probs = redirected_probs(probs, topo)
    batch = probs.shape[0]
    mu = torch.ones(batch, 1, dtype=probs.dtype, device=probs.device)
    per_level = [mu]
    for t in range(deepest):
        p = probs[:, 2**t - 1 : 2 ** (t + 1) - 1]
        mu = torch.stack((mu * p, mu * (1 - p)), dim=2).reshape(batch, 2 ** (t + 1))
        per_level.append(mu)

    out = [per_level[level] for level in wanted]
    if single:
        out = [p.squeeze(0) for p in out]
    return out


def leaf_posterior(edge_left_prob: ArrayLike, topo: TreeTopology) -> torch.Tensor:
    return level_posteriors(edge_left_prob, topo, [topo.depth])[0]


def node_reach(edge_left_prob: ArrayLike, topo: TreeTopology) -> torch.Tensor:
    """Probability of reaching each internal node, laid out like the router output."""
    posteriors = level_posteriors(edge_left_prob, topo, range(topo.depth))
    return torch.cat(posteriors, dim=-1)


# --------------------------------------------------
# Hard assignment
# --------------------------------------------------


def assign_cluster(
    leaf_posterior: ArrayLike, topo: TreeTopology
) -> Union[int, np.ndarray]:
    """
    Argmax over active leaves; ties go to the lowest leaf index.

    Accepts one posterior (returns an int) or a batch (returns an array).
    """
    if isinstance(leaf_posterior, torch.Tensor):
        post = leaf_posterior.detach().cpu().double().numpy()
    else:
        post = np.asarray(leaf_posterior, dtype=np.float64)
    single = post.ndim == 1
    post = np.atleast_2d(post)
    if post.shape[1] != topo.num_leaves:
        raise InvalidArgumentError(
            f"posterior has {post.shape[1]} entries, topology has {topo.num_leaves} leaves"
        )

    mask = np.asarray(topo.active_leaf_mask, dtype=bool)
    masked = np.where(mask[None, :], post, -np.inf)
    best = masked.max(axis=1)
    if np.any(~(best > 0)):
        raise InvariantError("posterior has no mass on any active leaf")
    # np.argmax returns the first maximum, which is the lowest index
    leaves = masked.argmax(axis=1)
    return int(leaves[0]) if single else leaves


def assign_at_level(
    leaves: Union[int, ArrayLike], topo: TreeTopology, level: int
) -> Union[int, np.ndarray]:
    """Ancestor of each leaf at `level`: cuts the hierarchy into a flat partition."""
    if not 0 <= level <= topo.depth:
        raise InvalidArgumentError(f"level {level} outside [0, {topo.depth}]")
    shift = topo.depth - level
    if isinstance(leaves, (int, np.integer)):
        return int(leaves) >> shift
    return np.asarray(leaves, dtype=np.int64) >> shift


# --------------------------------------------------
# Pruning
# --------------------------------------------------


def prune_leaf(topo: TreeTopology, leaf_index: int) -> TreeTopology:
    if not topo.is_active_leaf(leaf_index):
        raise InvalidArgumentError(f"leaf {leaf_index} is not an active leaf")
    if topo.num_active <= 2:
        raise InvalidStateError(
            f"cannot prune below 2 active leaves (have {topo.num_active})"
        )
    mask = list(topo.active_leaf_mask)
    mask[leaf_index] = False
    return TreeTopology(depth=topo.depth, active_leaf_mask=tuple(mask))


# --------------------------------------------------
# Distances
# --------------------------------------------------


def leaf_tree_distance(topo: TreeTopology, leaf_a: int, leaf_b: int) -> int:
    """Edges on the path between two leaves: 2 * (T - level(LCA))."""
    for leaf in (leaf_a, leaf_b):
        if not topo.is_active_leaf(leaf):
            raise InvalidArgumentError(f"leaf {leaf} is not an active leaf")
    # leaves below the same level-t node share their first t bits
    return 2 * (leaf_a ^ leaf_b).bit_length()


@lru_cache(maxsize=16)
def _distance_matrix(depth: int) -> np.ndarray:
    leaves = np.arange(2**depth)
    xor = leaves[:, None] ^ leaves[None, :]
    dist = np.zeros_like(xor)
    for h in range(1, depth + 1):
        dist[(xor >> (h - 1)) > 0] = 2 * h
    dist.setflags(write=False)
    return dist


def leaf_distance_matrix(topo: TreeTopology) -> np.ndarray:
    """All pairwise leaf distances (pruned leaves included, callers mask them)."""
    return _distance_matrix(topo.depth)
