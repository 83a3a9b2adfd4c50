import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import dotenv
import yaml
from pydantic import ValidationError

from pyhiclust import logger
from pyhiclust.checkpoint import Checkpoint, load_checkpoint
from pyhiclust.data import LabeledDataset, load_dataset
from pyhiclust.export import build_hierarchy, write_export
from pyhiclust.metrics import evaluate
from pyhiclust.models.ConfigModels import RunConfig
from pyhiclust.models.DataModels import DatasetSpec
from pyhiclust.models.ReportModels import EvalReport
from pyhiclust.models.TrainingModels import EpochRecord, StepRecord, TrainState
from pyhiclust.plots import PLOT_KINDS
from pyhiclust.training import Trainer
from pyhiclust.utils.constants import (
    CHECKPOINT_DIRNAME,
    DISTANCE_CSV,
    ENV_DEVICE,
    ENV_OUTPUT_ROOT,
    EPOCH_LOG,
    EVAL_REPORT,
    HIERARCHY_EXPORT,
    METRIC_LOG,
    STEP_LOG,
)
from pyhiclust.utils.exceptions import (
    ConfigError,
    DatasetMismatchError,
    InvalidArgumentError,
    PyHiClustError,
)
from pyhiclust.utils.fileio import atomic_write_text


def _config_error(exc: ValidationError, prefix: str = "") -> ConfigError:
    """First pydantic error as a ConfigError naming the dotted field path."""
    first = exc.errors()[0]
    field = ".".join(str(part) for part in (prefix, *first["loc"]) if part != "")
    return ConfigError(first["msg"], field or None)


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}", "config")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}", "config") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping", "config")
    return raw


def load_run_config(path: Union[str, Path]) -> RunConfig:
    raw = _read_yaml(path)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise _config_error(exc) from exc


def load_dataset_spec(path: Union[str, Path]) -> DatasetSpec:
    """A dataset section from a YAML file: either a run config or a bare dataset spec."""
    raw = _read_yaml(path)
    section = raw.get("dataset", raw)
    try:
        return DatasetSpec.model_validate(section)
    except ValidationError as exc:
        raise _config_error(exc, "dataset") from exc


class HiClustApi:
    def __init__(self):
        dotenv.load_dotenv()
        self.output_root = os.getenv(ENV_OUTPUT_ROOT)
        self.device = os.getenv(ENV_DEVICE, "cpu")

    def run_dir(self, config: RunConfig) -> Path:
        directory = Path(config.output.directory)
        if self.output_root and not directory.is_absolute():
            return Path(self.output_root) / directory
        return directory

    # -----------------------
    # Helpers
    # -----------------------

    @staticmethod
    def _check_compatible(ckpt: Checkpoint, dataset: LabeledDataset) -> None:
        if tuple(ckpt.model.input_shape) != tuple(dataset.input_shape):
            raise DatasetMismatchError(
                f"checkpoint expects inputs {tuple(ckpt.model.input_shape)}, "
                f"dataset has {dataset.input_shape}"
            )

    @staticmethod
    def _trim_logs(run_dir: Path, state: Optional[TrainState]) -> None:
        """Drop log lines past the state being resumed (or all of them on a fresh run)."""
        for name, model, keep in (
            (EPOCH_LOG, EpochRecord, lambda r: state is not None and r.epoch < state.epoch),
            (STEP_LOG, StepRecord, lambda r: state is not None and r.step < state.global_step),
        ):
            path = run_dir / name
            if not path.exists():
                continue
            kept = [
                line
                for line in path.read_text(encoding="utf-8").splitlines()
                if line.strip() and keep(model.model_validate_json(line))
            ]
            atomic_write_text(path, "".join(f"{line}\n" for line in kept))

    def _dataset_for_checkpoint(
        self, ckpt: Checkpoint, data: Optional[Union[str, Path]]
    ) -> LabeledDataset:
        if data is not None:
            spec = load_dataset_spec(data)
        elif ckpt.meta.run_config and "dataset" in ckpt.meta.run_config:
            try:
                spec = DatasetSpec.model_validate(ckpt.meta.run_config["dataset"])
            except ValidationError as exc:
                raise _config_error(exc, "dataset") from exc
        else:
            raise InvalidArgumentError("checkpoint carries no dataset spec; pass one explicitly")
        dataset = load_dataset(spec)
        self._check_compatible(ckpt, dataset)
        return dataset

    def _write_report(self, report: EvalReport, out_dir: Path) -> None:
        atomic_write_text(out_dir / EVAL_REPORT, report.model_dump_json(indent=2))
        atomic_write_text(
            out_dir / METRIC_LOG,
            "".join(record.model_dump_json() + "\n" for record in report.records()),
        )
        if report.distances is not None:
            atomic_write_text(out_dir / DISTANCE_CSV, report.distances.to_csv())

    # -----------------------
    # Commands
    # -----------------------

    def train(
        self,
        config_path: Union[str, Path],
        resume: Optional[Union[str, Path]] = None,
        show_progress: bool = True,
    ) -> TrainState:
        """
        Train a run from a YAML config, optionally continuing from a checkpoint.

        Writes checkpoints, step/epoch logs, the final hierarchy export and,
        when the dataset has labels, the evaluation report and distance CSV.
        """
        try:
            config = load_run_config(config_path)
            run_dir = self.run_dir(config)
            run_dir.mkdir(parents=True, exist_ok=True)
            dataset = load_dataset(config.dataset)

            if resume is not None:
                ckpt = load_checkpoint(resume)
                self._check_compatible(ckpt, dataset)
                if ckpt.topology.depth != config.tree.depth:
                    raise DatasetMismatchError(
                        f"checkpoint tree depth {ckpt.topology.depth} != "
                        f"config depth {config.tree.depth}"
                    )
                logger.info(
                    "Resuming | checkpoint=%s | epoch=%s | active_leaves=%s",
                    resume,
                    ckpt.state.epoch,
                    ckpt.state.active_leaves,
                )
                self._trim_logs(run_dir, ckpt.state)
                trainer = Trainer(
                    config,
                    dataset,
                    model=ckpt.model,
                    state=ckpt.state,
                    optimizer_state=ckpt.optimizer_state,
                    device=self.device,
                    run_dir=run_dir,
                )
            else:
                self._trim_logs(run_dir, None)
                trainer = Trainer(config, dataset, device=self.device, run_dir=run_dir)

            state = trainer.fit(show_progress=show_progress)

            export = build_hierarchy(trainer.model, state.topology, dataset, self.device)
            write_export(export, "json-tree", run_dir / HIERARCHY_EXPORT)
            if dataset.has_labels:
                report = evaluate(
                    trainer.model, state.topology, dataset, self.device, epoch=state.epoch
                )
                self._write_report(report, run_dir)
            logger.info(
                "Training finished | run_dir=%s | epochs=%s | active_leaves=%s",
                run_dir,
                state.epoch,
                state.active_leaves,
            )
            return state

        except PyHiClustError as e:
            logger.error(f"Training failed: {e}")
            raise
        except Exception as e:
            logger.error(f"Unexpected error during training: {e}")
            raise

    def evaluate(
        self,
        checkpoint: Union[str, Path],
        data: Union[str, Path],
        out_dir: Optional[Union[str, Path]] = None,
    ) -> EvalReport:
        try:
            logger.info(f"Evaluating checkpoint: {checkpoint}")
            ckpt = load_checkpoint(checkpoint)
            dataset = self._dataset_for_checkpoint(ckpt, data)
            report = evaluate(
                ckpt.model, ckpt.topology, dataset, self.device, epoch=ckpt.state.epoch
            )
            if out_dir is None:
                parent = Path(checkpoint).resolve().parent
                out_dir = parent.parent if parent.name == CHECKPOINT_DIRNAME else parent
            self._write_report(report, Path(out_dir))
            logger.info(
                "NMI=%.4f | ACC=%.4f | ARI=%.4f | DP=%.4f | out=%s",
                report.nmi,
                report.acc,
                report.ari,
                report.dp,
                out_dir,
            )
            return report

        except PyHiClustError as e:
            logger.error(f"Evaluation failed: {e}")
            raise
        except Exception as e:
            logger.error(f"Unexpected error during evaluation: {e}")
            raise

    def export(
        self,
        checkpoint: Union[str, Path],
        fmt: str,
        out: Union[str, Path],
        data: Optional[Union[str, Path]] = None,
    ) -> Path:
        try:
            logger.info(f"Exporting hierarchy from checkpoint: {checkpoint}")
            ckpt = load_checkpoint(checkpoint)
            dataset = self._dataset_for_checkpoint(ckpt, data)
            export = build_hierarchy(ckpt.model, ckpt.topology, dataset, self.device)
            return write_export(export, fmt, out)

        except PyHiClustError as e:
            logger.error(f"Export failed: {e}")
            raise
        except Exception as e:
            logger.error(f"Unexpected error during export: {e}")
            raise

    def plot(self, input_path: Union[str, Path], kind: str, out: Union[str, Path]) -> Path:
        if kind not in PLOT_KINDS:
            raise InvalidArgumentError(
                f"unknown plot kind '{kind}', expected one of {sorted(PLOT_KINDS)}"
            )
        try:
            return PLOT_KINDS[kind](input_path, out)
        except PyHiClustError as e:
            logger.error(f"Plot failed: {e}")
            raise
        except Exception as e:
            logger.error(f"Unexpected error while plotting: {e}")
            raise
