"""End-to-end runs at desk scale. Deselected by default; run with `pytest -m slow`."""

import os
from pathlib import Path

import numpy as np
import pytest

from pyhiclust.data import load_dataset
from pyhiclust.metrics import evaluate, predict_leaves
from pyhiclust.models.ConfigModels import RunConfig
from pyhiclust.training import Trainer


pytestmark = pytest.mark.slow

GAUSSIANS = {
    "source": "synthetic-gaussians",
    "num_samples": 1000,
    "num_components": 4,
    "dim": 16,
    "separation": 10.0,
}


def _run(config: dict, run_dir=None):
    config = RunConfig.model_validate(config)
    dataset = load_dataset(config.dataset)
    trainer = Trainer(config, dataset, run_dir=run_dir)
    state = trainer.fit(show_progress=False)
    return trainer, dataset, state


def test_desk_scale_four_gaussians(tmp_path):
    trainer, dataset, state = _run(
        {
            "profile": "desk-scale",
            "dataset": GAUSSIANS,
            "tree": {"depth": 2},
            "schedule": {"target_leaves": 4},
            "seed": 0,
        },
        run_dir=tmp_path,
    )
    report = evaluate(trainer.model, state.topology, dataset)
    assert report.nmi >= 0.90
    assert report.acc >= 0.95

    leaves = predict_leaves(trainer.model, state.topology, dataset.inputs)
    shares = np.bincount(leaves, minlength=4) / len(leaves)
    assert shares.min() >= 0.10


def test_desk_scale_pruning():
    trainer, dataset, state = _run(
        {
            "profile": "desk-scale",
            "dataset": GAUSSIANS,
            "tree": {"depth": 3},
            "schedule": {"target_leaves": 4},
            "seed": 0,
        }
    )
    assert state.active_leaves == 4
    assert len(state.prune_events) == 4

    active = np.ones(8, dtype=bool)
    for event in state.prune_events:
        masses = np.asarray(event.leaf_masses)
        assert event.mass == masses[active].min()
        active[event.leaf] = False

    report = evaluate(trainer.model, state.topology, dataset)
    assert report.nmi >= 0.90

    # learning curve settles once pruning is over
    by_epoch = {r.epoch: r.metrics.nmi for r in state.history if r.metrics is not None}
    first_prune = state.prune_events[0].epoch
    last_prune = state.prune_events[-1].epoch
    before = [by_epoch[e] for e in range(first_prune - 5, first_prune)]
    after = [by_epoch[e] for e in range(last_prune + 1, last_prune + 6)]
    assert np.mean(after) > np.mean(before)


def _mnist_file(stem):
    root = Path(os.environ["PYHICLUST_MNIST_DIR"])
    for name in (stem, f"{stem}.gz"):
        if (root / name).exists():
            return str(root / name)
    pytest.skip(f"{stem} not found under {root}")


needs_mnist = pytest.mark.skipif(
    not os.getenv("PYHICLUST_MNIST_DIR"), reason="PYHICLUST_MNIST_DIR is not set"
)


@needs_mnist
def test_mnist_subset():
    trainer, dataset, state = _run(
        {
            "profile": "mnist-subset",
            "dataset": {
                "source": "idx-grayscale",
                "path": _mnist_file("train-images-idx3-ubyte"),
                "labels_path": _mnist_file("train-labels-idx1-ubyte"),
                "max_samples": 10000,
            },
            "seed": 0,
        }
    )
    active = [r.active_leaves for r in state.history]
    assert active == sorted(active, reverse=True)
    assert state.active_leaves == 10

    report = evaluate(trainer.model, state.topology, dataset)
    assert report.nmi >= 0.55
    assert report.dp >= 0.40


@needs_mnist
@pytest.mark.skipif(
    not os.getenv("PYHICLUST_FULL_PROFILE"),
    reason="full grayscale profile runs for hours; set PYHICLUST_FULL_PROFILE",
)
def test_grayscale_profile_on_full_mnist(tmp_path):
    trainer, dataset, state = _run(
        {
            "profile": "grayscale",
            "dataset": {
                "source": "idx-grayscale",
                "path": _mnist_file("train-images-idx3-ubyte"),
                "labels_path": _mnist_file("train-labels-idx1-ubyte"),
            },
            "output": {"checkpoint_every": 10},
            "seed": 0,
        },
        run_dir=tmp_path,
    )
    assert state.phase == "done"
    assert len(state.history) == 300
    active = [r.active_leaves for r in state.history]
    assert active == sorted(active, reverse=True)
    assert active[-1] == 10
    assert [e.epoch for e in state.prune_events] == list(range(210, 216))
    assert (tmp_path / "checkpoints" / "final.ckpt").is_file()
