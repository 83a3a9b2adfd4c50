"""
Hierarchy summaries: per-node reach and class composition, serialized as
versioned JSON or rendered as a Graphviz digraph.
"""

from pathlib import Path
from typing import List, Union

import numpy as np
import torch

from pyhiclust import logger
from pyhiclust.data import LabeledDataset
from pyhiclust.models.ReportModels import HierarchyExport, NodeSummary
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.networks import HierarchyNet, infer_routing
from pyhiclust.tree import active_nodes, assign_cluster, level_posteriors
from pyhiclust.utils.exceptions import DatasetMismatchError, InvalidArgumentError
from pyhiclust.utils.fileio import atomic_write_text


UNLABELED_CLASS = "unlabeled"


def build_hierarchy(
    model: HierarchyNet,
    topo: TreeTopology,
    dataset: LabeledDataset,
    device: Union[str, torch.device] = "cpu",
) -> HierarchyExport:
    """
    Summarize every node of the tree over `dataset`.

    Reach fractions are soft (mean level posterior); class counts come from
    the hard leaf assignment and are summed up the tree.
    """
    if tuple(dataset.input_shape) != tuple(model.input_shape):
        raise DatasetMismatchError(
            f"dataset samples have shape {dataset.input_shape}, "
            f"the model expects {tuple(model.input_shape)}"
        )
    routing = infer_routing(model, dataset.inputs, device)
    posteriors = level_posteriors(routing, topo)
    leaves = np.atleast_1d(assign_cluster(posteriors[-1], topo))

    if dataset.has_labels:
        class_names = dataset.class_names or [
            str(c) for c in range(int(dataset.labels.max()) + 1)
        ]
        labels = dataset.labels
    else:
        class_names = [UNLABELED_CLASS]
        labels = np.zeros(len(dataset), dtype=np.int64)

    leaf_counts = np.zeros((topo.num_leaves, len(class_names)), dtype=np.int64)
    np.add.at(leaf_counts, (leaves, labels), 1)

    active = active_nodes(topo)
    cluster_ids = {leaf: k for k, leaf in enumerate(topo.active_leaves)}
    nodes: List[NodeSummary] = []
    for level in range(topo.depth + 1):
        span = 2 ** (topo.depth - level)
        counts = leaf_counts.reshape(2**level, span, -1).sum(axis=1)
        reach = posteriors[level].mean(dim=0).tolist()
        for index in range(2**level):
            row = counts[index]
            dominant = None
            if row.sum() > 0 and dataset.has_labels:
                dominant = class_names[int(np.argmax(row))]
            nodes.append(
                NodeSummary(
                    level=level,
                    index=index,
                    active=bool(active[level][index]),
                    reach_fraction=float(reach[index]),
                    class_counts=[int(c) for c in row],
                    dominant_class=dominant,
                    cluster_id=cluster_ids.get(index) if level == topo.depth else None,
                )
            )

    return HierarchyExport(
        topology=topo.to_record(),
        class_names=class_names,
        num_samples=len(dataset),
        nodes=nodes,
    )


# --------------------------------------------------
# Serialization
# --------------------------------------------------


def to_json(export: HierarchyExport) -> str:
    return export.model_dump_json(indent=2)


def from_json(text: str) -> HierarchyExport:
    return HierarchyExport.model_validate_json(text)


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _dot_label(node: NodeSummary, is_leaf: bool) -> str:
    lines = [node.dominant_class or "-", f"reach={node.reach_fraction:.3f}"]
    if is_leaf and node.cluster_id is not None:
        lines.insert(0, f"cluster {node.cluster_id}")
    # graphviz line breaks are the two characters backslash-n
    return '"' + "\\n".join(_dot_escape(line) for line in lines) + '"'


def to_dot(export: HierarchyExport) -> str:
    """Graphviz digraph of the active part of the tree."""
    depth = export.topology.depth
    by_key = {(n.level, n.index): n for n in export.nodes}
    lines = [
        "digraph hierarchy {",
        "  node [shape=box, fontname=Helvetica];",
    ]
    edges = []
    for level in range(depth + 1):
        for index in range(2**level):
            node = by_key[(level, index)]
            if not node.active:
                continue
            lines.append(f"  {node.node_id} [label={_dot_label(node, level == depth)}];")
            if level < depth:
                for child_index in (2 * index, 2 * index + 1):
                    child = by_key[(level + 1, child_index)]
                    if child.active:
                        edges.append(f"  {node.node_id} -> {child.node_id};")
    lines.extend(edges)
    lines.append("}")
    return "\n".join(lines) + "\n"


EXPORT_FORMATS = {"json-tree": to_json, "dot": to_dot}


def write_export(
    export: HierarchyExport, fmt: str, out: Union[str, Path]
) -> Path:
    if fmt not in EXPORT_FORMATS:
        raise InvalidArgumentError(
            f"unknown export format '{fmt}', expected one of {sorted(EXPORT_FORMATS)}"
        )
    path = atomic_write_text(out, EXPORT_FORMATS[fmt](export))
    logger.info(
        "Hierarchy exported | format=%s | path=%s | active_leaves=%s",
        fmt,
        path,
        export.topology.active_leaf_mask.count("1"),
    )
    return path
