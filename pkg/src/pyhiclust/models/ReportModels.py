import csv
import io
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pyhiclust.models.TreeModels import TopologyRecord, TreeTopology
from pyhiclust.utils.constants import HIERARCHY_FORMAT_VERSION


class MetricRecord(BaseModel):
    metric: str
    value: float
    epoch: Optional[int] = None
    split: str = "train+test"


class LevelScore(BaseModel):
    level: int
    clusters: int = Field(..., description="Occupied nodes at this level")
    nmi: float
    acc: float
    ari: float


# --------------------------------------------------
# Labeled assignment
# --------------------------------------------------


class LabeledAssignment(BaseModel):
    """Predicted leaf and ground-truth class of every sample."""

    leaves: Any = Field(..., description="int64 array of predicted leaf indices")
    labels: Any = Field(..., description="int64 array of class indices")
    topology: TreeTopology
    class_names: List[str] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def coerce_arrays(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            for key in ("leaves", "labels"):
                if key in data:
                    data[key] = np.asarray(data[key], dtype=np.int64).reshape(-1)
        return data

    @model_validator(mode="after")
    def validate_assignment(self) -> "LabeledAssignment":
        if self.leaves.shape != self.labels.shape:
            raise ValueError(
                f"{self.leaves.size} predicted leaves vs {self.labels.size} labels"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("class indices must be non-negative")
        mask = np.asarray(self.topology.active_leaf_mask, dtype=bool)
        if self.leaves.size and (
            self.leaves.min() < 0
            or self.leaves.max() >= mask.size
            or not mask[self.leaves].all()
        ):
            raise ValueError("predicted leaves must be active leaves of the topology")
        if self.class_names and self.labels.size and self.labels.max() >= len(self.class_names):
            raise ValueError(
                f"label {int(self.labels.max())} has no name among "
                f"{len(self.class_names)} classes"
            )
        return self

    @classmethod
    def of(
        cls,
        leaves: Sequence[int],
        labels: Sequence[int],
        topology: TreeTopology,
        class_names: Optional[List[str]] = None,
    ) -> "LabeledAssignment":
        return cls(
            leaves=leaves, labels=labels, topology=topology, class_names=class_names or []
        )

    @property
    def num_samples(self) -> int:
        return int(self.labels.size)

    @property
    def num_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def names(self) -> List[str]:
        return self.class_names or [str(c) for c in range(self.num_classes)]

    def leaf_class_counts(self) -> np.ndarray:
        """(2^T, classes) matrix of sample counts."""
        counts = np.zeros((self.topology.num_leaves, self.num_classes), dtype=np.int64)
        np.add.at(counts, (self.leaves, self.labels), 1)
        return counts


# --------------------------------------------------
# Class distance matrix
# --------------------------------------------------


class ClassDistanceMatrix(BaseModel):
    class_names: List[str]
    values: List[List[float]] = Field(..., description="Mean tree-edge distances")
    undersized_classes: List[str] = Field(
        default_factory=list,
        description="Classes with fewer than 2 samples; their diagonal is 0 by convention",
    )

    @model_validator(mode="after")
    def validate_matrix(self) -> "ClassDistanceMatrix":
        k = len(self.class_names)
        if len(self.values) != k or any(len(row) != k for row in self.values):
            raise ValueError(f"distance matrix must be {k}x{k}")
        for a in range(k):
            for b in range(k):
                if self.values[a][b] < 0:
                    raise ValueError("distances must be non-negative")
                if abs(self.values[a][b] - self.values[b][a]) > 1e-9:
                    raise ValueError("distance matrix must be symmetric")
        return self

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["class", *self.class_names])
        for name, row in zip(self.class_names, self.values):
            writer.writerow([name, *(repr(float(v)) for v in row)])
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ClassDistanceMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or len(rows[0]) < 2:
            raise ValueError("distance CSV needs a header row with class names")
        names = rows[0][1:]
        values = [[float(v) for v in row[1:]] for row in rows[1:] if row]
        return cls(class_names=names, values=values)


# --------------------------------------------------
# Evaluation report
# --------------------------------------------------


class EvalReport(BaseModel):
    nmi: float
    acc: float
    ari: float
    dp: float
    num_samples: int
    active_leaves: int
    epoch: Optional[int] = None
    split: str = "train+test"
    dp_mode: Literal["exact", "sampled"] = "exact"
    level_scores: List[LevelScore] = Field(default_factory=list)
    distances: Optional[ClassDistanceMatrix] = None

    def records(self) -> List[MetricRecord]:
        return [
            MetricRecord(metric=name, value=getattr(self, name), epoch=self.epoch, split=self.split)
            for name in ("nmi", "acc", "ari", "dp")
        ]

    def summary(self) -> Dict[str, float]:
        return {"NMI": self.nmi, "ACC": self.acc, "ARI": self.ari, "DP": self.dp}


# --------------------------------------------------
# Hierarchy export
# --------------------------------------------------


class NodeSummary(BaseModel):
    level: int = Field(..., ge=0)
    index: int = Field(..., ge=0)
    active: bool = Field(..., description="Subtree still holds an active leaf")
    reach_fraction: float = Field(..., ge=0, description="Mean posterior mass reaching the node")
    class_counts: List[int] = Field(..., description="Hard-assigned samples per class")
    dominant_class: Optional[str] = None
    cluster_id: Optional[int] = Field(None, description="Leaves only: flat cluster id")

    @property
    def node_id(self) -> str:
        return f"n{self.level}_{self.index}"


class HierarchyExport(BaseModel):
    format_version: int = HIERARCHY_FORMAT_VERSION
    topology: TopologyRecord
    class_names: List[str]
    num_samples: int = Field(..., ge=0)
    nodes: List[NodeSummary]

    @model_validator(mode="after")
    def validate_hierarchy(self) -> "HierarchyExport":
        if self.format_version != HIERARCHY_FORMAT_VERSION:
            raise ValueError(
                f"unsupported hierarchy format version {self.format_version}"
            )
        depth = self.topology.depth
        expected = 2 ** (depth + 1) - 1
        if len(self.nodes) != expected:
            raise ValueError(f"expected {expected} nodes, got {len(self.nodes)}")
        by_key = {(n.level, n.index): n for n in self.nodes}
        if len(by_key) != expected:
            raise ValueError("duplicate node entries")
        leaf_total = sum(sum(by_key[(depth, i)].class_counts) for i in range(2**depth))
        if leaf_total != self.num_samples:
            raise ValueError(
                f"leaf class counts sum to {leaf_total}, expected {self.num_samples}"
            )
        for (level, index), node in by_key.items():
            if level == depth:
                continue
            left, right = by_key[(level + 1, 2 * index)], by_key[(level + 1, 2 * index + 1)]
            if abs(node.reach_fraction - left.reach_fraction - right.reach_fraction) > 1e-6:
                raise ValueError(f"reach fraction of {node.node_id} != sum of children")
            summed = [a + b for a, b in zip(left.class_counts, right.class_counts)]
            if node.class_counts != summed:
                raise ValueError(f"class counts of {node.node_id} != sum of children")
        return self

    def node(self, level: int, index: int) -> NodeSummary:
        for n in self.nodes:
            if n.level == level and n.index == index:
                return n
        raise KeyError((level, index))

    @property
    def leaves(self) -> List[NodeSummary]:
        depth = self.topology.depth
        return sorted((n for n in self.nodes if n.level == depth), key=lambda n: n.index)
