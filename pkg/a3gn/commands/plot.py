"""``a3gn plot``: threshold-accuracy curves of one or more reports in one figure."""

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Tuple

from a3gn.evaluation import load_report, read_curve_csv

logger = logging.getLogger(__name__)

CURVE_SUFFIX = "_curve"


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "plot", help="plot threshold-accuracy curves", allow_abbrev=False
    )
    parser.add_argument("reports", nargs="+", type=Path, help="report JSON or curve CSV files")
    parser.add_argument("--out", type=Path, default=Path("curves.png"), help="output PNG")
    parser.set_defaults(handler=cmd_plot, accepts_overrides=False)


def curve_with_label(path: Path) -> Tuple[str, List[Tuple[float, float]]]:
    """Curve of a report file, labelled by the report's variant when known."""
    path = Path(path)
    if path.suffix == ".json":
        report = load_report(path)
        return f"{report.variant} ({report.mode}, {report.protocol})", report.threshold_curve

    curve = read_curve_csv(path)
    label = path.stem
    if label.endswith(CURVE_SUFFIX):
        sibling = path.with_name(f"{label[: -len(CURVE_SUFFIX)]}.json")
        if sibling.is_file():
            report = load_report(sibling)
            label = f"{report.variant} ({report.mode}, {report.protocol})"
    return label, curve


def cmd_plot(args: argparse.Namespace, overrides: Dict[str, str]) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for path in args.reports:
        label, curve = curve_with_label(path)
        thresholds, accuracies = zip(*curve)
        ax.plot(thresholds, accuracies, label=label)
    ax.set_xlabel("threshold")
    ax.set_ylabel("accuracy")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()

    args.out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.out, dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"📈 Plotted {len(args.reports)} curve(s) to {args.out}")
    return 0
