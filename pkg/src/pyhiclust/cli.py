"""
Command-line entry point: ``pyhiclust train|eval|export|plot``.

Exit codes: 0 success, 2 configuration or usage error, 3 dataset/checkpoint
mismatch, 1 any other failure.
"""

import argparse
import sys
from typing import List, Optional

from rich.console import Console
from rich.markup import escape
from rich.table import Table

from pyhiclust import logger
from pyhiclust.HiClustApis import HiClustApi
from pyhiclust.export import EXPORT_FORMATS
from pyhiclust.models.ReportModels import EvalReport
from pyhiclust.plots import PLOT_KINDS
from pyhiclust.utils.exceptions import (
    ConfigError,
    DatasetMismatchError,
    InvalidArgumentError,
    PyHiClustError,
)


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISMATCH = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyhiclust",
        description="Contrastive hierarchical clustering with a soft binary tree.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a YAML run config")
    train.add_argument("--config", required=True, help="run config (YAML)")
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--no-progress", action="store_true", help="hide the progress bar")

    ev = sub.add_parser("eval", help="score a checkpoint against labeled data")
    ev.add_argument("--ckpt", required=True, help="checkpoint archive")
    ev.add_argument("--data", required=True, help="YAML file with a dataset section")
    ev.add_argument("--out", help="directory for eval.json and the distance CSV")

    ex = sub.add_parser("export", help="export the learned hierarchy")
    ex.add_argument("--ckpt", required=True, help="checkpoint archive")
    ex.add_argument("--format", required=True, choices=sorted(EXPORT_FORMATS))
    ex.add_argument("--out", required=True, help="output file")
    ex.add_argument("--data", help="dataset YAML; defaults to the one stored in the checkpoint")

    pl = sub.add_parser("plot", help="render learning curves or a distance heatmap")
    pl.add_argument("--input", required=True, help="epochs.jsonl or class-distance CSV")
    pl.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))
    pl.add_argument("--out", required=True, help="image file (.png, .svg or .pdf)")
    return parser


def print_report(report: EvalReport, console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title=f"Evaluation ({report.num_samples} samples, {report.active_leaves} leaves)")
    for column in ("NMI", "ACC", "ARI", "DP"):
        table.add_column(column, justify="right")
    table.add_row(*(f"{v:.4f}" for v in report.summary().values()))
    console.print(table)

    if report.level_scores:
        levels = Table(title="Per-level partitions")
        for column in ("level", "clusters", "NMI", "ACC", "ARI"):
            levels.add_column(column, justify="right")
        for score in report.level_scores:
            levels.add_row(
                str(score.level),
                str(score.clusters),
                f"{score.nmi:.4f}",
                f"{score.acc:.4f}",
                f"{score.ari:.4f}",
            )
        console.print(levels)


def run(args: argparse.Namespace) -> None:
    api = HiClustApi()
    if args.command == "train":
        api.train(args.config, resume=args.resume, show_progress=not args.no_progress)
    elif args.command == "eval":
        print_report(api.evaluate(args.ckpt, args.data, args.out))
    elif args.command == "export":
        api.export(args.ckpt, args.format, args.out, data=args.data)
    elif args.command == "plot":
        api.plot(args.input, args.kind, args.out)


def _print_error(tag: str, exc: BaseException) -> None:
    Console(stderr=True).print(
        f"[red]{tag}:[/red] {escape(str(exc))}", highlight=False, soft_wrap=True
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except DatasetMismatchError as e:
        _print_error("mismatch", e)
        return EXIT_MISMATCH
    except (ConfigError, InvalidArgumentError) as e:
        _print_error("error", e)
        return EXIT_USAGE
    except (PyHiClustError, OSError) as e:
        _print_error("failed", e)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception("Unhandled error")
        _print_error("failed", e)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
