"""
Checkpoint archives.

A checkpoint is a zip file holding `meta.json` (specs, training state,
optimizer hyper-parameters) plus one `.npy` member per tensor. Member
timestamps are fixed and JSON keys are sorted, so saving the same state
twice produces the same bytes.
"""

import io
import json
import zipfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError

from pyhiclust import logger
from pyhiclust.models.CheckpointModels import CheckpointMeta
from pyhiclust.models.TrainingModels import TrainState
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.networks import HierarchyNet
from pyhiclust.utils.constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from pyhiclust.utils.exceptions import CheckpointFormatError
from pyhiclust.utils.fileio import atomic_write_bytes


META_MEMBER = "meta.json"
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    meta: CheckpointMeta
    model: HierarchyNet
    optimizer_state: Optional[Dict[str, Any]]

    @property
    def state(self) -> TrainState:
        return self.meta.state

    @property
    def topology(self) -> TreeTopology:
        return self.meta.state.topology


# --------------------------------------------------
# Encoding helpers
# --------------------------------------------------


def _tensor_bytes(t: torch.Tensor) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, t.detach().cpu().numpy(), allow_pickle=False)
    return buffer.getvalue()


def _bytes_tensor(data: bytes) -> torch.Tensor:
    return torch.from_numpy(np.load(io.BytesIO(data), allow_pickle=False).copy())


def _split_optimizer_state(
    optimizer_state: Dict[str, Any],
) -> Tuple[List[Dict[str, Any]], Dict[str, torch.Tensor], Dict[str, float]]:
    groups = [
        {k: (list(v) if isinstance(v, tuple) else v) for k, v in group.items()}
        for group in optimizer_state["param_groups"]
    ]
    tensors: Dict[str, torch.Tensor] = {}
    scalars: Dict[str, float] = {}
    for param_id in sorted(optimizer_state["state"]):
        for key in sorted(optimizer_state["state"][param_id]):
            value = optimizer_state["state"][param_id][key]
            name = f"optimizer/{param_id}/{key}"
            if isinstance(value, torch.Tensor):
                tensors[name] = value
            else:
                scalars[name] = float(value)
    return groups, tensors, scalars


def _join_optimizer_state(
    groups: List[Dict[str, Any]],
    tensors: Dict[str, torch.Tensor],
    scalars: Dict[str, float],
) -> Dict[str, Any]:
    state: Dict[int, Dict[str, Any]] = {}
    for name, value in [*tensors.items(), *scalars.items()]:
        _, param_id, key = name.split("/", 2)
        state.setdefault(int(param_id), {})[key] = value
    param_groups = [
        {k: (tuple(v) if k == "betas" else v) for k, v in group.items()} for group in groups
    ]
    return {"state": state, "param_groups": param_groups}


# --------------------------------------------------
# Save
# --------------------------------------------------


def checkpoint_bytes(
    model: HierarchyNet,
    state: TrainState,
    optimizer_state: Optional[Dict[str, Any]] = None,
    run_config: Optional[Dict[str, Any]] = None,
) -> bytes:
    model_tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    groups, opt_tensors, opt_scalars = (None, {}, {})
    if optimizer_state is not None:
        groups, opt_tensors, opt_scalars = _split_optimizer_state(optimizer_state)

    meta = CheckpointMeta(
        format=CHECKPOINT_FORMAT,
        version=CHECKPOINT_VERSION,
        encoder=model.encoder_spec,
        depth=model.depth,
        router_mode=model.router_mode,
        contrast_head=model.head_spec,
        state=state,
        run_config=run_config,
        model_tensors=list(model_tensors),
        optimizer_groups=groups,
        optimizer_tensors=list(opt_tensors),
        optimizer_scalars=opt_scalars,
    )
    meta_json = json.dumps(meta.model_dump(mode="json"), sort_keys=True, indent=2)

    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:

        def put(name: str, data: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            archive.writestr(info, data)

        put(META_MEMBER, meta_json.encode("utf-8"))
        for name, tensor in [*model_tensors.items(), *opt_tensors.items()]:
            put(f"{name}.npy", _tensor_bytes(tensor))
    return buffer.getvalue()


def save_checkpoint(
    path: Union[str, Path],
    model: HierarchyNet,
    state: TrainState,
    optimizer_state: Optional[Dict[str, Any]] = None,
    run_config: Optional[Dict[str, Any]] = None,
) -> Path:
    data = checkpoint_bytes(model, state, optimizer_state, run_config)
    path = atomic_write_bytes(path, data)
    logger.info(
        "Checkpoint written | path=%s | epoch=%s | phase=%s | active_leaves=%s",
        path,
        state.epoch,
        state.phase,
        state.active_leaves,
    )
    return path


# --------------------------------------------------
# Restore
# --------------------------------------------------


def _read_meta(archive: zipfile.ZipFile) -> CheckpointMeta:
    raw = json.loads(archive.read(META_MEMBER).decode("utf-8"))
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(
            f"not a {CHECKPOINT_FORMAT} archive (format tag {raw.get('format')!r})"
            if isinstance(raw, dict)
            else "checkpoint metadata is not an object"
        )
    if raw.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint version {raw.get('version')!r} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return CheckpointMeta.model_validate(raw)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by `save_checkpoint`.

    Any corruption or version mismatch raises CheckpointFormatError before
    anything is returned.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"checkpoint not found: {path}")

    try:
        with zipfile.ZipFile(path) as archive:
            meta = _read_meta(archive)
            model_state = {
                name.removeprefix("model/"): _bytes_tensor(archive.read(f"{name}.npy"))
                for name in meta.model_tensors
            }
            opt_tensors = {
                name: _bytes_tensor(archive.read(f"{name}.npy"))
                for name in meta.optimizer_tensors
            }

        model = HierarchyNet.build(
            meta.encoder, meta.depth, meta.router_mode, meta.contrast_head
        )
        model.load_state_dict(model_state, strict=True)
    except CheckpointFormatError:
        raise
    except (
        zipfile.BadZipFile,
        KeyError,
        EOFError,
        zlib.error,
        ValidationError,
        ValueError,
        RuntimeError,
    ) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint {path}: {exc}") from exc

    optimizer_state = None
    if meta.optimizer_groups is not None:
        optimizer_state = _join_optimizer_state(
            meta.optimizer_groups, opt_tensors, meta.optimizer_scalars
        )

    logger.debug(
        "Checkpoint restored | path=%s | epoch=%s | tensors=%s",
        path,
        meta.state.epoch,
        len(meta.model_tensors) + len(meta.optimizer_tensors),
    )
    return Checkpoint(meta=meta, model=model, optimizer_state=optimizer_state)
