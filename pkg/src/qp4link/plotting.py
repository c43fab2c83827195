"""Report figures, rendered off-screen to image files.

Uses the Agg canvas directly rather than pyplot, so no global figure state or
display backend is involved.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from . import mhp
from .harness import MetricsReport, NodeLog

OUTCOME_COLORS = {"successes": "#2a7d4f", "failures": "#9a9a9a", "errors": "#c0392b"}


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120)
    return path


def outcome_counts(report: MetricsReport, path: Path) -> Path:
    """Grouped bar chart of SUCCESS / FAIL / ERROR replies per node."""
    fig = Figure(figsize=(5.0, 3.2), layout="constrained")
    ax = fig.add_subplot()
    names = [n.name for n in report.nodes]
    width = 0.8 / len(OUTCOME_COLORS)
    for i, (key, color) in enumerate(OUTCOME_COLORS.items()):
        xs = [k + (i - 1) * width for k in range(len(names))]
        ax.bar(xs, [getattr(n, key) for n in report.nodes], width, label=key, color=color)
    ax.set_xticks(range(len(names)), names)
    ax.set_ylabel("replies")
    ax.set_title(f"{report.scenario}, seed {report.seed}, {report.cycles} cycles")
    ax.legend(frameon=False)
    return _save(fig, path)


def cumulative_successes(logs: Dict[str, NodeLog], path: Path) -> Path:
    """Running count of SUCCESS replies against cycle, one line per node."""
    fig = Figure(figsize=(5.0, 3.2), layout="constrained")
    ax = fig.add_subplot()
    # identical logs are the expected case, so the second line is dashed to stay visible
    for (name, log), style in zip(logs.items(), ("-", "--")):
        cycles: List[int] = []
        total: List[int] = []
        n = 0
        for entry in log.entries:
            n += entry.outcome == mhp.SUCCESS
            cycles.append(entry.cycle)
            total.append(n)
        ax.step(cycles, total, where="post", label=name, linestyle=style)
    ax.set_xlabel("cycle")
    ax.set_ylabel("successes")
    ax.legend(frameon=False)
    return _save(fig, path)


def render_figures(report: MetricsReport, logs: Dict[str, NodeLog], directory) -> List[Path]:
    """Write every figure for one run into ``directory``; returns the paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = [outcome_counts(report, out / "outcomes.png")]
    if all(log.keep for log in logs.values()):
        paths.append(cumulative_successes(logs, out / "successes.png"))
    return paths
