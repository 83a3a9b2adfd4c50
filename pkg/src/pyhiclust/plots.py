"""
Static figures: learning curves from an epoch log and heatmaps of class
distance matrices.
"""

import io
from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.figure import Figure
from pydantic import ValidationError

from pyhiclust import logger
from pyhiclust.models.ReportModels import ClassDistanceMatrix
from pyhiclust.models.TrainingModels import EpochRecord
from pyhiclust.utils.exceptions import InvalidArgumentError, ParseError
from pyhiclust.utils.fileio import atomic_write_bytes


PHASE_BOUNDARY_LABEL = "tree phase starts"
PRUNE_LABEL = "leaf pruned"

# formats whose writers stamp a creation date unless told not to
_FIXED_METADATA = {
    "png": {"Software": None},
    "svg": {"Date": None, "Creator": None},
    "pdf": {"CreationDate": None, "Creator": None, "Producer": None},
}


def _style() -> None:
    plt.rcParams.update(
        {
            "figure.dpi": 100,
            "font.size": 9,
            "axes.grid": True,
            "grid.alpha": 0.3,
            "svg.hashsalt": "pyhiclust",
        }
    )


def read_epoch_log(path: Union[str, Path]) -> List[EpochRecord]:
    path = Path(path)
    records = []
    offset = 0
    with open(path, "rb") as fh:
        for line in fh:
            if line.strip():
                try:
                    records.append(EpochRecord.model_validate_json(line))
                except (ValidationError, ValueError) as exc:
                    raise ParseError(f"bad epoch record in {path}: {exc}", offset) from exc
            offset += len(line)
    if not records:
        raise InvalidArgumentError(f"epoch log {path} is empty")
    return records


# --------------------------------------------------
# Figures
# --------------------------------------------------


def curves_figure(records: List[EpochRecord]) -> Figure:
    """Total loss and NMI against epoch, with phase boundary and prunes marked."""
    if not records:
        raise InvalidArgumentError("no epoch records to plot")
    _style()
    fig, (ax_loss, ax_nmi) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)

    epochs = [r.epoch for r in records]
    ax_loss.plot(epochs, [r.loss.total for r in records], color="tab:blue", label="total loss")
    ax_loss.set_ylabel("loss")

    scored = [r for r in records if r.metrics is not None]
    ax_nmi.plot(
        [r.epoch for r in scored],
        [r.metrics.nmi for r in scored],
        color="tab:green",
        marker="o",
        markersize=3,
        label="NMI",
    )
    ax_nmi.set_ylabel("NMI")
    ax_nmi.set_ylim(0, 1)
    ax_nmi.set_xlabel("epoch")

    tree_epochs = [r.epoch for r in records if r.phase == "tree"]
    pretrained = any(r.phase == "pretrain" for r in records)
    for ax in (ax_loss, ax_nmi):
        if tree_epochs and pretrained:
            ax.axvline(min(tree_epochs), color="black", linestyle="--", label=PHASE_BOUNDARY_LABEL)
        for k, r in enumerate(r for r in records if r.pruned_leaf is not None):
            ax.axvline(
                r.epoch,
                color="tab:red",
                alpha=0.4,
                linewidth=0.8,
                label=PRUNE_LABEL if k == 0 else None,
            )
        ax.legend(loc="best", fontsize=7)

    fig.tight_layout()
    return fig


def heatmap_figure(matrix: ClassDistanceMatrix) -> Figure:
    _style()
    k = len(matrix.class_names)
    size = max(4.0, 0.5 * k + 2)
    fig, ax = plt.subplots(figsize=(size, size))
    image = ax.imshow(matrix.values, cmap="viridis")
    ax.set_xticks(range(k), labels=matrix.class_names, rotation=90)
    ax.set_yticks(range(k), labels=matrix.class_names)
    ax.grid(False)
    ax.set_title("mean tree distance between classes")
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return fig


# --------------------------------------------------
# Output
# --------------------------------------------------


def save_figure(fig: Figure, out: Union[str, Path]) -> Path:
    out = Path(out)
    fmt = out.suffix.lstrip(".").lower() or "png"
    if fmt not in _FIXED_METADATA:
        raise InvalidArgumentError(
            f"unsupported image format '{fmt}', expected one of {sorted(_FIXED_METADATA)}"
        )
    buffer = io.BytesIO()
    try:
        fig.savefig(buffer, format=fmt, metadata=_FIXED_METADATA[fmt], facecolor="white")
    finally:
        plt.close(fig)
    return atomic_write_bytes(out, buffer.getvalue())


def plot_curves(log_path: Union[str, Path], out: Union[str, Path]) -> Path:
    records = read_epoch_log(log_path)
    path = save_figure(curves_figure(records), out)
    logger.info("Curves plotted | epochs=%s | path=%s", len(records), path)
    return path


def plot_heatmap(csv_path: Union[str, Path], out: Union[str, Path]) -> Path:
    text = Path(csv_path).read_text(encoding="utf-8")
    try:
        matrix = ClassDistanceMatrix.from_csv(text)
    except (ValidationError, ValueError) as exc:
        raise ParseError(f"bad distance matrix {csv_path}: {exc}") from exc
    path = save_figure(heatmap_figure(matrix), out)
    logger.info("Heatmap plotted | classes=%s | path=%s", len(matrix.class_names), path)
    return path


PLOT_KINDS = {"curves": plot_curves, "heatmap": plot_heatmap}
