import io
import json
import zipfile

import pytest
import torch

from pyhiclust.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from pyhiclust.models.TrainingModels import TrainState
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.training import Trainer
from pyhiclust.tree import prune_leaf
from pyhiclust.utils.exceptions import CheckpointFormatError


def _rewrite(src, dst, edit_meta=None, drop=()):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for info in zin.infolist():
            if info.filename in drop:
                continue
            data = zin.read(info.filename)
            if info.filename == "meta.json" and edit_meta is not None:
                meta = json.loads(data)
                edit_meta(meta)
                data = json.dumps(meta).encode()
            zout.writestr(info, data)
    return dst


@pytest.fixture
def trained(tiny_config, synthetic_dataset):
    """A trainer stopped right after its only prune."""
    trainer = Trainer(tiny_config, synthetic_dataset)
    for _ in range(3):
        trainer.run_epoch()
    return trainer


@pytest.fixture
def saved(trained, tmp_path):
    return trained.save(tmp_path / "run.ckpt")


def test_round_trip_restores_everything(trained, saved):
    ckpt = load_checkpoint(saved)
    assert ckpt.state.epoch == 3
    assert ckpt.state.phase == "tree"
    assert ckpt.topology == trained.state.topology
    assert ckpt.state.history == trained.state.history
    assert ckpt.meta.run_config == trained.config.model_dump(mode="json")
    for key, value in trained.model.state_dict().items():
        assert torch.equal(ckpt.model.state_dict()[key], value)
    assert ckpt.optimizer_state["param_groups"][0]["betas"] == trained.optimizer.param_groups[0]["betas"]


def test_resave_is_byte_identical(saved, tmp_path):
    ckpt = load_checkpoint(saved)
    again = save_checkpoint(
        tmp_path / "again.ckpt",
        ckpt.model,
        ckpt.state,
        ckpt.optimizer_state,
        ckpt.meta.run_config,
    )
    assert again.read_bytes() == saved.read_bytes()


def test_checkpoint_bytes_are_deterministic(mlp_net):
    state = TrainState(topology=prune_leaf(TreeTopology.complete(2), 1))
    assert checkpoint_bytes(mlp_net, state) == checkpoint_bytes(mlp_net, state)


def test_checkpoint_without_optimizer(mlp_net, tmp_path):
    state = TrainState(topology=TreeTopology.complete(2))
    ckpt = load_checkpoint(save_checkpoint(tmp_path / "bare.ckpt", mlp_net, state))
    assert ckpt.optimizer_state is None
    assert ckpt.meta.run_config is None


def test_resume_matches_uninterrupted_run(tiny_config, synthetic_dataset, saved):
    straight = Trainer(tiny_config, synthetic_dataset)
    straight.fit(show_progress=False)

    ckpt = load_checkpoint(saved)
    assert ckpt.topology.num_active == 3
    resumed = Trainer(
        tiny_config,
        synthetic_dataset,
        model=ckpt.model,
        state=ckpt.state,
        optimizer_state=ckpt.optimizer_state,
    )
    resumed.fit(show_progress=False)

    assert resumed.state.active_leaves == 3
    assert [r.model_dump() for r in resumed.state.history] == [
        r.model_dump() for r in straight.state.history
    ]
    for key, value in straight.model.state_dict().items():
        assert torch.equal(resumed.model.state_dict()[key], value)


# --------------------------------------------------
# Corruption
# --------------------------------------------------


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_not_a_zip(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a zip archive")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_truncated_archive(saved, tmp_path):
    data = saved.read_bytes()
    path = tmp_path / "short.ckpt"
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_version_mismatch(saved, tmp_path):
    path = _rewrite(saved, tmp_path / "v2.ckpt", edit_meta=lambda m: m.update(version=2))
    with pytest.raises(CheckpointFormatError, match="version"):
        load_checkpoint(path)


def test_wrong_format_tag(saved, tmp_path):
    path = _rewrite(saved, tmp_path / "other.ckpt", edit_meta=lambda m: m.update(format="zip"))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_missing_tensor_member(saved, tmp_path):
    with zipfile.ZipFile(saved) as archive:
        victim = next(n for n in archive.namelist() if n.startswith("model/"))
    path = _rewrite(saved, tmp_path / "holes.ckpt", drop={victim})
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_shape_mismatch_in_tensor(saved, tmp_path):
    def deepen(meta):
        meta["depth"] = 3

    path = _rewrite(saved, tmp_path / "deep.ckpt", edit_meta=deepen)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_members_are_npy_and_json(saved):
    with zipfile.ZipFile(io.BytesIO(saved.read_bytes())) as archive:
        names = archive.namelist()
        assert names[0] == "meta.json"
        assert all(n.endswith(".npy") for n in names[1:])
        assert all(info.date_time == (1980, 1, 1, 0, 0, 0) for info in archive.infolist())
