import copy
import itertools

import numpy as np
import pytest
import torch

from pyhiclust.data import load_dataset
from pyhiclust.models.ConfigModels import EncoderSpec, RunConfig
from pyhiclust.models.DataModels import DatasetSpec
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.networks import HierarchyNet


def enumerate_leaf_posterior(probs, topo: TreeTopology) -> np.ndarray:
    """Brute force: walk every root-to-leaf path, applying pruning redirection."""
    probs = np.asarray(probs, dtype=np.float64)
    out = np.zeros(topo.num_leaves)
    for bits in itertools.product((0, 1), repeat=topo.depth):
        mass, index = 1.0, 0
        for level, bit in enumerate(bits):
            p_left = probs[2**level - 1 + index]
            left_alive = topo.subtree_has_active_leaf(level + 1, 2 * index)
            right_alive = topo.subtree_has_active_leaf(level + 1, 2 * index + 1)
            if left_alive and not right_alive:
                p_left = 1.0
            elif right_alive and not left_alive:
                p_left = 0.0
            mass *= p_left if bit == 0 else 1.0 - p_left
            index = 2 * index + bit
        out[index] = mass
    return out


def random_topology(rng: np.random.Generator, depth: int) -> TreeTopology:
    leaves = 2**depth
    keep = rng.integers(2, leaves + 1)
    active = set(rng.choice(leaves, size=keep, replace=False).tolist())
    return TreeTopology(depth=depth, active_leaf_mask=tuple(i in active for i in range(leaves)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def topo2():
    return TreeTopology.complete(2)


@pytest.fixture
def topo3():
    return TreeTopology.complete(3)


@pytest.fixture
def synthetic_spec():
    return DatasetSpec(
        source="synthetic-gaussians",
        num_samples=64,
        num_components=4,
        dim=8,
        separation=10.0,
        seed=3,
    )


@pytest.fixture
def synthetic_dataset(synthetic_spec):
    return load_dataset(synthetic_spec)


# smallest run that still exercises pretraining, the tree phase and pruning
TINY_CONFIG = {
    "dataset": {
        "source": "synthetic-gaussians",
        "num_samples": 64,
        "num_components": 4,
        "dim": 8,
    },
    "encoder": {"architecture": "mlp-small", "embed_dim": 16, "hidden_width": 32},
    "tree": {"depth": 2},
    "schedule": {
        "pretrain_epochs": 1,
        "tree_epochs": 3,
        "prune_start_epoch": 1,
        "target_leaves": 3,
        "batch_size": 16,
        "num_workers": 0,
    },
    "seed": 7,
}


@pytest.fixture
def tiny_config_dict():
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture
def tiny_config(tiny_config_dict):
    return RunConfig.model_validate(tiny_config_dict)


@pytest.fixture
def mlp_net():
    spec = EncoderSpec(architecture="mlp-small", embed_dim=8, hidden_width=16, input_shape=(6,))
    return HierarchyNet.build(spec, depth=2, seed=0)


@pytest.fixture(autouse=True)
def _no_output_root(monkeypatch):
    monkeypatch.delenv("PYHICLUST_OUTPUT_ROOT", raising=False)
    monkeypatch.delenv("PYHICLUST_DEVICE", raising=False)
    torch.manual_seed(0)
