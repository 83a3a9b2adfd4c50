"""
Three-phase training: encoder pre-training on NT-Xent only, then tree
construction on the full objective with one leaf pruned per epoch until
the target leaf count is reached.
"""

from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import torch
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    TextColumn,
    TimeElapsedColumn,
)

from pyhiclust import logger
from pyhiclust.checkpoint import save_checkpoint
from pyhiclust.data import LabeledDataset, PairBatchStream, UnlabeledDataset, ViewGenerator
from pyhiclust.losses import LossTerms, PairOutputs, ntxent, total_loss
from pyhiclust.metrics import evaluate
from pyhiclust.models.ConfigModels import RunConfig
from pyhiclust.models.DataModels import PairBatch
from pyhiclust.models.ReportModels import EvalReport
from pyhiclust.models.TrainingModels import (
    EpochMetrics,
    EpochRecord,
    LossBreakdown,
    PruneEvent,
    StepRecord,
    TrainState,
)
from pyhiclust.models.TreeModels import TreeTopology
from pyhiclust.networks import HierarchyNet, infer_routing
from pyhiclust.tree import leaf_posterior, prune_leaf
from pyhiclust.utils.constants import (
    CHECKPOINT_DIRNAME,
    EPOCH_LOG,
    FINAL_CHECKPOINT,
    LAST_CHECKPOINT,
    STEP_LOG,
)
from pyhiclust.utils.exceptions import InvalidArgumentError, InvalidStateError, NumericError
from pyhiclust.utils.fileio import append_line


Evaluator = Callable[[HierarchyNet, TreeTopology, LabeledDataset], EvalReport]


def build_optimizer(model: HierarchyNet, learning_rate: float, weight_decay: float):
    return torch.optim.Adam(model.parameters(), lr=learning_rate, weight_decay=weight_decay)


def forward_pair(
    model: HierarchyNet, batch: PairBatch, device: Union[str, torch.device] = "cpu"
) -> PairOutputs:
    """Anchors and views go through the network as one batch."""
    n = batch.size
    z = model.encode(torch.cat([batch.anchors, batch.views]).to(device))
    routing = model.route(z)
    embed = model.contrast_embed(z)
    return PairOutputs(
        anchor_routing=routing[:n],
        view_routing=routing[n:],
        anchor_embed=embed[:n],
        view_embed=embed[n:],
    )


def pretrain_terms(
    model: HierarchyNet,
    batch: PairBatch,
    temperature: float,
    device: Union[str, torch.device] = "cpu",
) -> LossTerms:
    """NT-Xent only. The router head is never evaluated, so it gets no gradient."""
    n = batch.size
    z = model.encode(torch.cat([batch.anchors, batch.views]).to(device))
    embed = model.contrast_embed(z)
    zero = torch.zeros((), dtype=embed.dtype, device=embed.device)
    return LossTerms(
        cohi=zero,
        r1=zero,
        r2=ntxent(embed[:n], embed[n:], temperature),
        beta1=0.0,
        beta2=1.0,
    )


def leaf_masses(
    model: HierarchyNet,
    topo: TreeTopology,
    dataset: UnlabeledDataset,
    device: Union[str, torch.device] = "cpu",
    batch_size: int = 1024,
) -> np.ndarray:
    """Expected fraction of the (un-augmented) dataset reaching each leaf."""
    routing = infer_routing(model, dataset.inputs, device, batch_size)
    return leaf_posterior(routing, topo).mean(dim=0).numpy()


def select_prune_leaf(masses: np.ndarray, topo: TreeTopology) -> int:
    """Active leaf with the lowest mass; ties go to the lowest index."""
    masses = np.asarray(masses, dtype=np.float64)
    if masses.shape != (topo.num_leaves,):
        raise InvalidArgumentError(
            f"expected {topo.num_leaves} leaf masses, got shape {masses.shape}"
        )
    active = np.asarray(topo.active_leaf_mask, dtype=bool)
    return int(np.argmin(np.where(active, masses, np.inf)))


class Trainer:
    """
    Owns the model, optimizer and TrainState of one run.

    Batches depend only on (seed, epoch, batch index), so a run resumed from
    a checkpoint continues exactly as the uninterrupted run would have.
    """

    def __init__(
        self,
        config: RunConfig,
        dataset: LabeledDataset,
        model: Optional[HierarchyNet] = None,
        state: Optional[TrainState] = None,
        optimizer_state: Optional[Dict[str, Any]] = None,
        device: Union[str, torch.device] = "cpu",
        run_dir: Optional[Union[str, Path]] = None,
        evaluator: Optional[Evaluator] = None,
    ):
        self.config = config
        self.schedule = config.schedule
        self.dataset = dataset
        self.train_data = dataset.unlabeled()
        self.device = torch.device(device)
        self.run_dir = Path(run_dir) if run_dir is not None else None

        if model is None:
            encoder_spec = config.encoder.with_input_shape(dataset.input_shape)
            model = HierarchyNet.build(
                encoder_spec,
                config.tree.depth,
                config.tree.router,
                config.contrast_head,
                seed=self.schedule.seed,
            )
        elif tuple(model.input_shape) != tuple(dataset.input_shape):
            raise InvalidArgumentError(
                f"model expects inputs {tuple(model.input_shape)}, "
                f"dataset has {dataset.input_shape}"
            )
        self.model = model.to(self.device)

        self.optimizer = build_optimizer(
            self.model, self.schedule.learning_rate, self.schedule.weight_decay
        )
        if optimizer_state is not None:
            self.optimizer.load_state_dict(optimizer_state)

        self.state = state or TrainState(
            topology=TreeTopology.complete(config.tree.depth),
            phase=self.schedule.phase_for(0),
        )
        if self.state.topology.depth != config.tree.depth:
            raise InvalidArgumentError(
                f"state topology has depth {self.state.topology.depth}, "
                f"config asks for {config.tree.depth}"
            )

        self.views = ViewGenerator(
            config.resolved_augmentation(self.train_data.channels), self.train_data
        )
        self.evaluator = evaluator
        if self.evaluator is None and dataset.has_labels:
            self.evaluator = lambda m, t, d: evaluate(m, t, d, device=self.device)

    # -----------------------
    # Paths
    # -----------------------

    def _artifact(self, name: str) -> Optional[Path]:
        return None if self.run_dir is None else self.run_dir / name

    def _checkpoint_path(self, name: str) -> Optional[Path]:
        return None if self.run_dir is None else self.run_dir / CHECKPOINT_DIRNAME / name

    # -----------------------
    # Pruning
    # -----------------------

    def _pruned_in(self, epoch: int) -> Optional[int]:
        for event in self.state.prune_events:
            if event.epoch == epoch:
                return event.leaf
        return None

    def should_prune(self, epoch: int) -> bool:
        # at most one leaf per epoch, also when the epoch is re-run after a resume
        return (
            self.schedule.phase_for(epoch) == "tree"
            and self.schedule.tree_epoch(epoch) >= self.schedule.prune_start_epoch
            and self.state.active_leaves > self.schedule.target_leaves
            and self._pruned_in(epoch) is None
        )

    def prune_step(self) -> PruneEvent:
        topo = self.state.topology
        if topo.num_active <= self.schedule.target_leaves:
            raise InvalidStateError(
                f"already at {topo.num_active} active leaves "
                f"(target {self.schedule.target_leaves})"
            )
        masses = leaf_masses(self.model, topo, self.train_data, self.device)
        leaf = select_prune_leaf(masses, topo)
        self.state.topology = prune_leaf(topo, leaf)

        event = PruneEvent(
            epoch=self.state.epoch,
            leaf=leaf,
            mass=float(masses[leaf]),
            leaf_masses=[float(m) for m in masses],
            active_after=self.state.active_leaves,
        )
        self.state.prune_events.append(event)
        logger.info(
            "Pruned leaf | epoch=%s | leaf=%s | mass=%.6f | active=%s",
            event.epoch,
            leaf,
            event.mass,
            event.active_after,
        )
        logger.debug("Leaf masses before pruning | %s", event.leaf_masses)
        return event

    # -----------------------
    # Epochs
    # -----------------------

    def _step(self, batch: PairBatch, phase: str) -> LossBreakdown:
        self.optimizer.zero_grad(set_to_none=True)
        if phase == "pretrain":
            terms = pretrain_terms(
                self.model, batch, self.config.loss.ntxent_temperature, self.device
            )
        else:
            outputs = forward_pair(self.model, batch, self.device)
            terms = total_loss(outputs, self.state.topology, self.config.loss)

        total = terms.total
        if not bool(torch.isfinite(total)):
            raise NumericError(
                f"non-finite loss at step {self.state.global_step} "
                f"(cohi={float(terms.cohi)}, r1={float(terms.r1)}, r2={float(terms.r2)})"
            )
        total.backward()
        self.optimizer.step()
        return terms.breakdown()

    def run_epoch(self, progress: Optional[Progress] = None) -> EpochRecord:
        """Train one epoch in the phase the schedule assigns to it."""
        epoch = self.state.epoch
        phase = self.schedule.phase_for(epoch)
        if phase == "done":
            raise InvalidStateError(f"training finished after {epoch} epochs")
        self.state.phase = phase

        pruned = self._pruned_in(epoch)
        if self.should_prune(epoch):
            pruned = self.prune_step().leaf

        stream = PairBatchStream(
            self.train_data,
            self.views,
            self.schedule.batch_size,
            seed=self.schedule.seed,
            epoch=epoch,
            num_workers=self.schedule.num_workers,
        )
        task = None
        if progress is not None:
            task = progress.add_task(f"epoch {epoch} ({phase})", total=len(stream))

        self.model.train()
        losses: List[LossBreakdown] = []
        for batch in stream:
            breakdown = self._step(batch, phase)
            losses.append(breakdown)
            step = StepRecord(
                step=self.state.global_step,
                epoch=epoch,
                phase=phase,
                cohi=breakdown.cohi,
                r1=breakdown.r1,
                r2=breakdown.r2,
                total=breakdown.total,
                active_leaves=self.state.active_leaves,
            )
            self.state.global_step += 1
            logger.debug("Step | %s", step.model_dump_json())
            if (path := self._artifact(STEP_LOG)) is not None:
                append_line(path, step.model_dump_json())
            if task is not None:
                progress.advance(task)
        if task is not None:
            progress.remove_task(task)

        self.state.epoch = epoch + 1
        self.state.phase = self.schedule.phase_for(self.state.epoch)
        record = EpochRecord(
            epoch=epoch,
            phase=phase,
            loss=LossBreakdown.mean(losses),
            active_leaves=self.state.active_leaves,
            pruned_leaf=pruned,
            metrics=self._maybe_evaluate(epoch, phase),
        )
        self.state.history.append(record)
        if (path := self._artifact(EPOCH_LOG)) is not None:
            append_line(path, record.model_dump_json())

        logger.info(
            "Epoch done | epoch=%s | phase=%s | loss=%.4f | active_leaves=%s%s",
            epoch,
            phase,
            record.loss.total,
            record.active_leaves,
            "" if record.metrics is None else f" | NMI={record.metrics.nmi:.4f}",
        )
        return record

    def _maybe_evaluate(self, epoch: int, phase: str) -> Optional[EpochMetrics]:
        every = self.schedule.eval_every
        if self.evaluator is None or every == 0:
            return None
        # always score the last epoch of each phase
        boundary = self.schedule.phase_for(epoch + 1) != phase
        if (epoch + 1) % every and not boundary:
            return None
        report = self.evaluator(self.model, self.state.topology, self.dataset)
        return EpochMetrics(nmi=report.nmi, acc=report.acc, ari=report.ari, dp=report.dp)

    # -----------------------
    # Checkpoints
    # -----------------------

    def save(self, path: Union[str, Path]) -> Path:
        path = save_checkpoint(
            path,
            self.model,
            self.state,
            self.optimizer.state_dict(),
            self.config.model_dump(mode="json"),
        )
        self.state.checkpoint_path = str(path)
        return path

    # -----------------------
    # Full run
    # -----------------------

    def fit(self, show_progress: bool = True) -> TrainState:
        """Run every remaining epoch, checkpointing along the way."""
        logger.info(
            "Training | epochs=%s | start_epoch=%s | depth=%s | target_leaves=%s | device=%s",
            self.schedule.total_epochs,
            self.state.epoch,
            self.config.tree.depth,
            self.schedule.target_leaves,
            self.device,
        )
        progress = Progress(
            TextColumn("{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            disable=not show_progress,
            transient=True,
        )
        with progress:
            while self.schedule.phase_for(self.state.epoch) != "done":
                try:
                    self.run_epoch(progress)
                except NumericError:
                    # keep the failing state for inspection; the epoch is not counted
                    if (path := self._checkpoint_path(LAST_CHECKPOINT)) is not None:
                        self.save(path)
                    logger.error(
                        "Numeric failure | epoch=%s | step=%s",
                        self.state.epoch,
                        self.state.global_step,
                    )
                    raise
                due = self.state.epoch % self.config.output.checkpoint_every == 0
                if due and (path := self._checkpoint_path(LAST_CHECKPOINT)) is not None:
                    self.save(path)

        self.state.phase = "done"
        if (path := self._checkpoint_path(FINAL_CHECKPOINT)) is not None:
            self.save(path)
        return self.state
