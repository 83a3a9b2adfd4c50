import matplotlib.pyplot as plt
import pytest

from pyhiclust.models.ReportModels import ClassDistanceMatrix
from pyhiclust.models.TrainingModels import EpochMetrics, EpochRecord, LossBreakdown
from pyhiclust.plots import (
    PHASE_BOUNDARY_LABEL,
    PRUNE_LABEL,
    curves_figure,
    heatmap_figure,
    plot_curves,
    plot_heatmap,
    read_epoch_log,
    save_figure,
)
from pyhiclust.utils.exceptions import InvalidArgumentError, ParseError


def _record(epoch, phase, pruned=None, nmi=None):
    return EpochRecord(
        epoch=epoch,
        phase=phase,
        loss=LossBreakdown.compose(cohi=-0.5, r1=0.7, r2=2.0, beta1=0.125, beta2=1.0),
        active_leaves=8 if pruned is None else 7,
        pruned_leaf=pruned,
        metrics=None if nmi is None else EpochMetrics(nmi=nmi, acc=0.5, ari=0.3, dp=0.6),
    )


@pytest.fixture
def records():
    return [
        _record(0, "pretrain", nmi=0.1),
        _record(1, "pretrain", nmi=0.2),
        _record(2, "tree", nmi=0.4),
        _record(3, "tree", pruned=5, nmi=0.5),
        _record(4, "tree", nmi=0.6),
    ]


@pytest.fixture
def epoch_log(records, tmp_path):
    path = tmp_path / "epochs.jsonl"
    path.write_text("".join(r.model_dump_json() + "\n" for r in records))
    return path


@pytest.fixture
def distance_csv(tmp_path):
    matrix = ClassDistanceMatrix(
        class_names=["zero", "one", "two"],
        values=[[0.5, 4.0, 6.0], [4.0, 0.0, 6.0], [6.0, 6.0, 1.0]],
    )
    path = tmp_path / "class_distances.csv"
    path.write_text(matrix.to_csv())
    return path


def _lines(fig, label):
    return [line for ax in fig.axes for line in ax.get_lines() if line.get_label() == label]


def test_curves_mark_phase_boundary(records):
    fig = curves_figure(records)
    boundary = _lines(fig, PHASE_BOUNDARY_LABEL)
    assert len(boundary) == 2
    assert all(list(line.get_xdata()) == [2, 2] for line in boundary)
    pruned = _lines(fig, PRUNE_LABEL)
    assert [list(line.get_xdata()) for line in pruned] == [[3, 3], [3, 3]]
    plt.close(fig)


def test_curves_without_pretraining_have_no_boundary(records):
    fig = curves_figure(records[2:])
    assert _lines(fig, PHASE_BOUNDARY_LABEL) == []
    plt.close(fig)


def test_heatmap_labels_axes_with_class_names(distance_csv):
    fig = heatmap_figure(ClassDistanceMatrix.from_csv(distance_csv.read_text()))
    ax = fig.axes[0]
    assert [t.get_text() for t in ax.get_xticklabels()] == ["zero", "one", "two"]
    assert [t.get_text() for t in ax.get_yticklabels()] == ["zero", "one", "two"]
    plt.close(fig)


def test_read_epoch_log(epoch_log, records):
    assert read_epoch_log(epoch_log) == records


def test_empty_log(tmp_path):
    path = tmp_path / "epochs.jsonl"
    path.write_text("\n")
    with pytest.raises(InvalidArgumentError, match="empty"):
        read_epoch_log(path)


def test_bad_log_line_reports_offset(epoch_log):
    first = epoch_log.read_bytes()
    epoch_log.write_bytes(first + b"{not json}\n")
    with pytest.raises(ParseError) as info:
        read_epoch_log(epoch_log)
    assert info.value.offset == len(first)


@pytest.mark.parametrize("suffix", ["png", "svg"])
def test_plot_curves_is_deterministic(epoch_log, tmp_path, suffix):
    a = plot_curves(epoch_log, tmp_path / f"a.{suffix}")
    b = plot_curves(epoch_log, tmp_path / f"b.{suffix}")
    assert a.stat().st_size > 0
    assert a.read_bytes() == b.read_bytes()


def test_plot_heatmap_writes_pdf(distance_csv, tmp_path):
    path = plot_heatmap(distance_csv, tmp_path / "heat.pdf")
    assert path.read_bytes().startswith(b"%PDF")


def test_plot_heatmap_rejects_bad_csv(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("class,a,b\na,0,1\n")
    with pytest.raises(ParseError):
        plot_heatmap(path, tmp_path / "out.png")


def test_unsupported_image_format(records, tmp_path):
    with pytest.raises(InvalidArgumentError):
        save_figure(curves_figure(records), tmp_path / "curves.gif")
