"""
External validation against ground-truth classes.

Flat scores (NMI, ACC, ARI) compare the leaf partition with the classes;
dendrogram purity and the class distance matrix also use the tree shape.
"""

from typing import List, Literal, Optional, Union

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from pyhiclust import logger
from pyhiclust.data import LabeledDataset
from pyhiclust.models.ReportModels import (
    ClassDistanceMatrix,
    EvalReport,
    LabeledAssignment,
    LevelScore,
)
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.networks import HierarchyNet, infer_routing
from pyhiclust.tree import assign_at_level, assign_cluster, leaf_distance_matrix, leaf_posterior
from pyhiclust.utils.constants import (
    DP_EXACT_MAX_SAMPLES,
    DP_SAMPLED_PAIRS,
    DP_SAMPLING_SEED,
)
from pyhiclust.utils.exceptions import DatasetMismatchError, InvalidArgumentError


DPMode = Literal["auto", "exact", "sampled"]


def _require_samples(assignment: LabeledAssignment, minimum: int, metric: str) -> None:
    if assignment.num_samples < minimum:
        raise InvalidArgumentError(
            f"{metric} needs at least {minimum} sample(s), got {assignment.num_samples}"
        )


# --------------------------------------------------
# Flat partition scores
# --------------------------------------------------


def _nmi(labels: np.ndarray, predicted: np.ndarray) -> float:
    return float(normalized_mutual_info_score(labels, predicted, average_method="arithmetic"))


def _acc(labels: np.ndarray, predicted: np.ndarray) -> float:
    counts = contingency_matrix(labels, predicted)
    size = max(counts.shape)
    # clusters without a class (or classes without a cluster) match a zero row
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum() / labels.size)


def _ari(labels: np.ndarray, predicted: np.ndarray) -> float:
    return float(adjusted_rand_score(labels, predicted))


def nmi(assignment: LabeledAssignment) -> float:
    """Mutual information normalized by the arithmetic mean of both entropies."""
    _require_samples(assignment, 1, "nmi")
    return _nmi(assignment.labels, assignment.leaves)


def acc(assignment: LabeledAssignment) -> float:
    """Best one-to-one cluster->class accuracy (Hungarian on the padded contingency)."""
    _require_samples(assignment, 1, "acc")
    return _acc(assignment.labels, assignment.leaves)


def ari(assignment: LabeledAssignment) -> float:
    _require_samples(assignment, 2, "ari")
    return _ari(assignment.labels, assignment.leaves)


def level_scores(assignment: LabeledAssignment) -> List[LevelScore]:
    """NMI/ACC/ARI of the partition cut at every level 1..T."""
    _require_samples(assignment, 2, "level_scores")
    topo = assignment.topology
    scores = []
    for level in range(1, topo.depth + 1):
        nodes = assign_at_level(assignment.leaves, topo, level)
        scores.append(
            LevelScore(
                level=level,
                clusters=int(np.unique(nodes).size),
                nmi=_nmi(assignment.labels, nodes),
                acc=_acc(assignment.labels, nodes),
                ari=_ari(assignment.labels, nodes),
            )
        )
    return scores


# --------------------------------------------------
# Dendrogram purity
# --------------------------------------------------


def _subtree_counts(leaf_counts: np.ndarray, depth: int) -> List[np.ndarray]:
    """Class counts per node, indexed by subtree height (0 = leaves)."""
    classes = leaf_counts.shape[1]
    return [
        leaf_counts.reshape(2 ** (depth - h), 2**h, classes).sum(axis=1)
        for h in range(depth + 1)
    ]


def _purities(subtree_counts: List[np.ndarray]) -> List[np.ndarray]:
    out = []
    for counts in subtree_counts:
        size = counts.sum(axis=1, keepdims=True).astype(np.float64)
        out.append(
            np.divide(counts, size, out=np.zeros(counts.shape), where=size > 0)
        )
    return out


def _dp_exact(assignment: LabeledAssignment, total_pairs: float) -> float:
    depth = assignment.topology.depth
    subtrees = _subtree_counts(assignment.leaf_class_counts(), depth)
    purities = _purities(subtrees)
    score = 0.0
    for h, purity in enumerate(purities):
        if h == 0:
            here = subtrees[0]
            pairs = here * (here - 1) / 2
        else:
            # pairs whose LCA is exactly this node: one side in each child
            children = subtrees[h - 1]
            pairs = children[0::2] * children[1::2]
        score += float((pairs * purity).sum())
    return score / total_pairs


def _dp_sampled(
    assignment: LabeledAssignment,
    class_sizes: np.ndarray,
    num_pairs: int,
    seed: int,
) -> float:
    depth = assignment.topology.depth
    purities = _purities(_subtree_counts(assignment.leaf_class_counts(), depth))
    rng = np.random.default_rng(seed)

    pair_counts = class_sizes * (class_sizes - 1) / 2
    classes = rng.choice(class_sizes.size, size=num_pairs, p=pair_counts / pair_counts.sum())
    by_class = np.argsort(assignment.labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(class_sizes)[:-1]])

    sizes = class_sizes[classes]
    first = rng.integers(0, sizes)
    second = rng.integers(0, sizes - 1)
    second = second + (second >= first)
    leaf_a = assignment.leaves[by_class[starts[classes] + first]]
    leaf_b = assignment.leaves[by_class[starts[classes] + second]]

    # LCA height is the bit length of the xor of both leaf indices
    heights = np.frexp((leaf_a ^ leaf_b).astype(np.float64))[1]
    values = np.empty(num_pairs)
    for h, purity in enumerate(purities):
        sel = heights == h
        values[sel] = purity[leaf_a[sel] >> h, classes[sel]]
    return float(values.mean())


def dendrogram_purity(
    assignment: LabeledAssignment,
    mode: DPMode = "auto",
    num_pairs: int = DP_SAMPLED_PAIRS,
    seed: int = DP_SAMPLING_SEED,
) -> float:
    """
    Mean, over same-class pairs, of the share of that class among the samples
    below the pair's lowest common ancestor.

    `auto` is exact up to DP_EXACT_MAX_SAMPLES samples and sampled above.
    """
    _require_samples(assignment, 2, "dendrogram_purity")
    class_sizes = np.bincount(assignment.labels, minlength=assignment.num_classes)
    total_pairs = float((class_sizes * (class_sizes - 1) // 2).sum())
    if total_pairs == 0:
        raise InvalidArgumentError("dendrogram purity needs at least one same-class pair")

    if mode == "auto":
        mode = "exact" if assignment.num_samples <= DP_EXACT_MAX_SAMPLES else "sampled"
    if mode == "exact":
        return _dp_exact(assignment, total_pairs)
    if mode == "sampled":
        return _dp_sampled(assignment, class_sizes, num_pairs, seed)
    raise InvalidArgumentError(f"unknown dendrogram purity mode '{mode}'")


# --------------------------------------------------
# Class distances
# --------------------------------------------------


def class_distance_matrix(assignment: LabeledAssignment) -> ClassDistanceMatrix:
    """
    d(A, B) = mean tree distance between the leaves of a in A and b in B.

    The diagonal averages over distinct within-class pairs; classes with
    fewer than two samples get 0 there and are listed as undersized.
    """
    counts = assignment.leaf_class_counts().astype(np.float64)
    distances = leaf_distance_matrix(assignment.topology).astype(np.float64)
    summed = counts.T @ distances @ counts
    summed = (summed + summed.T) / 2

    sizes = counts.sum(axis=0)
    denom = np.outer(sizes, sizes)
    np.fill_diagonal(denom, sizes * (sizes - 1))
    values = np.divide(summed, denom, out=np.zeros_like(summed), where=denom > 0)

    names = assignment.names()
    undersized = [name for name, size in zip(names, sizes) if size < 2]
    return ClassDistanceMatrix(
        class_names=names,
        values=values.tolist(),
        undersized_classes=undersized,
    )


# --------------------------------------------------
# Full evaluation
# --------------------------------------------------


def predict_leaves(
    model: HierarchyNet,
    topo: TreeTopology,
    inputs: torch.Tensor,
    device: Union[str, torch.device] = "cpu",
    batch_size: int = 1024,
) -> np.ndarray:
    routing = infer_routing(model, inputs, device, batch_size)
    return np.atleast_1d(assign_cluster(leaf_posterior(routing, topo), topo))


def evaluate(
    model: HierarchyNet,
    topo: TreeTopology,
    dataset: LabeledDataset,
    device: Union[str, torch.device] = "cpu",
    epoch: Optional[int] = None,
    dp_mode: DPMode = "auto",
    batch_size: int = 1024,
) -> EvalReport:
    """Score the model's hard leaf assignment against the dataset labels."""
    if not dataset.has_labels:
        raise DatasetMismatchError("evaluation needs a labeled dataset")
    if tuple(dataset.input_shape) != tuple(model.input_shape):
        raise DatasetMismatchError(
            f"dataset samples have shape {dataset.input_shape}, "
            f"the model expects {tuple(model.input_shape)}"
        )
    if model.depth != topo.depth:
        raise DatasetMismatchError(
            f"topology depth {topo.depth} does not match model depth {model.depth}"
        )

    leaves = predict_leaves(model, topo, dataset.inputs, device, batch_size)
    assignment = LabeledAssignment.of(leaves, dataset.labels, topo, dataset.class_names)
    resolved_mode = dp_mode
    if dp_mode == "auto":
        resolved_mode = "exact" if len(dataset) <= DP_EXACT_MAX_SAMPLES else "sampled"

    report = EvalReport(
        nmi=nmi(assignment),
        acc=acc(assignment),
        ari=ari(assignment),
        dp=dendrogram_purity(assignment, mode=resolved_mode),
        num_samples=len(dataset),
        active_leaves=topo.num_active,
        epoch=epoch,
        dp_mode=resolved_mode,
        level_scores=level_scores(assignment),
        distances=class_distance_matrix(assignment),
    )
    logger.debug(
        "Evaluated | epoch=%s | NMI=%.4f | ACC=%.4f | ARI=%.4f | DP=%.4f",
        epoch,
        report.nmi,
        report.acc,
        report.ari,
        report.dp,
    )
    return report
