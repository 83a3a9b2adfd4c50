from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Tuple


class TopologyRecord(BaseModel):
    """Structured text form of a topology: depth plus the mask as a bit string."""

    depth: int = Field(..., ge=1, description="Tree depth T")
    active_leaf_mask: str = Field(
        ...,
        pattern=r"^[01]+$",
        description="Active-leaf mask, leaf 0 first ('1' = active)",
    )


class PathCode(BaseModel):
    decisions: Tuple[int, ...] = Field(
        default=(), description="Binary decisions y_1..y_t, 0 = left, 1 = right"
    )

    model_config = ConfigDict(frozen=True)

    @field_validator("decisions")
    @classmethod
    def validate_bits(cls, v: Tuple[int, ...]):
        if any(bit not in (0, 1) for bit in v):
            raise ValueError("decisions must be 0 or 1")
        return v

    def __len__(self) -> int:
        return len(self.decisions)


class TreeTopology(BaseModel):
    """Complete binary tree of depth T with an active-leaf mask."""

    depth: int = Field(..., ge=1, description="Tree depth T (root at level 0)")
    active_leaf_mask: Tuple[bool, ...] = Field(
        ..., description="One flag per leaf; pruned leaves are False"
    )

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def validate_mask(self) -> "TreeTopology":
        if len(self.active_leaf_mask) != 2**self.depth:
            raise ValueError(
                f"active_leaf_mask must have {2**self.depth} entries, "
                f"got {len(self.active_leaf_mask)}"
            )
        if sum(self.active_leaf_mask) < 2:
            raise ValueError("at least 2 leaves must stay active")
        return self

    @classmethod
    def complete(cls, depth: int) -> "TreeTopology":
        return cls(depth=depth, active_leaf_mask=(True,) * (2**depth))

    # -----------------------
    # Sizes
    # -----------------------

    @property
    def num_internal(self) -> int:
        return 2**self.depth - 1

    @property
    def num_leaves(self) -> int:
        return 2**self.depth

    @property
    def active_leaves(self) -> List[int]:
        return [i for i, active in enumerate(self.active_leaf_mask) if active]

    @property
    def num_active(self) -> int:
        return sum(self.active_leaf_mask)

    # -----------------------
    # Node queries
    # -----------------------

    def neuron(self, level: int, index: int) -> int:
        """1-based router neuron n = 2^t + i parameterizing internal node (t, i)."""
        return 2**level + index

    def is_active_leaf(self, leaf: int) -> bool:
        return 0 <= leaf < self.num_leaves and self.active_leaf_mask[leaf]

    def subtree_has_active_leaf(self, level: int, index: int) -> bool:
        span = 2 ** (self.depth - level)
        return any(self.active_leaf_mask[index * span : (index + 1) * span])

    # -----------------------
    # Serialization
    # -----------------------

    def to_record(self) -> TopologyRecord:
        return TopologyRecord(
            depth=self.depth,
            active_leaf_mask="".join("1" if a else "0" for a in self.active_leaf_mask),
        )

    @classmethod
    def from_record(cls, record: TopologyRecord) -> "TreeTopology":
        return cls(
            depth=record.depth,
            active_leaf_mask=tuple(bit == "1" for bit in record.active_leaf_mask),
        )
