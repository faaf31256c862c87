"""Figure rendering for evaluation reports.

All figures are drawn off-screen and written to files; nothing here
opens a window. Rendering is deterministic for fixed inputs, so figures
participate in the byte-identical re-run contract like every other
artifact.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg", force=True)

from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

_ACCENT = "#4878a8"
_MUTED = "#b0b8c4"
_LINE = "#c44e52"

_DPI = 120


def render_png(fig: Figure) -> bytes:
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    # strip mutable metadata so identical inputs give identical bytes
    fig.savefig(buf, format="png", dpi=_DPI, metadata={"Software": None})
    return buf.getvalue()


def length_accuracy_figure(rows: list[dict], title: str = "") -> bytes:
    """Bars for accuracy (light: subject, dark: baseline), line for length.

    ``rows`` come from length_analysis: benchmark, mean_length, accuracy,
    and optionally baseline_accuracy, already ordered by mean length.
    """
    fig = Figure(figsize=(7.0, 4.2))
    ax = fig.add_subplot(111)
    names = [r["benchmark"] for r in rows]
    xs = range(len(rows))
    have_baseline = any(r.get("baseline_accuracy") is not None for r in rows)
    width = 0.38 if have_baseline else 0.6
    if have_baseline:
        baseline = [r["baseline_accuracy"] or 0.0 for r in rows]
        ax.bar([x - width / 2 for x in xs], baseline, width,
               color=_MUTED, label="baseline")
        ax.bar([x + width / 2 for x in xs], [r["accuracy"] for r in rows],
               width, color=_ACCENT, label="subject")
    else:
        ax.bar(list(xs), [r["accuracy"] for r in rows], width, color=_ACCENT,
               label="subject")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=15, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)

    ax2 = ax.twinx()
    ax2.plot(list(xs), [r["mean_length"] for r in rows], color=_LINE,
             marker="o", label="mean thought length")
    ax2.set_ylabel("mean thought length (tokens)")

    handles1, labels1 = ax.get_legend_handles_labels()
    handles2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(handles1 + handles2, labels1 + labels2, loc="upper left",
              fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return render_png(fig)


def difficulty_figure(breakdown: dict[str, float], title: str = "") -> bytes:
    """Accuracy per difficulty bin, overall drawn as a reference line."""
    fig = Figure(figsize=(5.4, 3.8))
    ax = fig.add_subplot(111)
    bins = [k for k in ("easy", "medium", "hard") if k in breakdown]
    ax.bar(range(len(bins)), [breakdown[b] for b in bins], 0.55, color=_ACCENT)
    if "overall" in breakdown:
        ax.axhline(breakdown["overall"], color=_LINE, linestyle="--",
                   linewidth=1.2, label=f"overall {breakdown['overall']:.2f}")
        ax.legend(fontsize=8)
    ax.set_xticks(range(len(bins)))
    ax.set_xticklabels(bins)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return render_png(fig)


def accuracy_figure(per_benchmark: dict[str, float], average: float | None,
                    title: str = "") -> bytes:
    """Per-benchmark accuracy bars with the cross-benchmark mean line."""
    fig = Figure(figsize=(5.8, 3.8))
    ax = fig.add_subplot(111)
    names = list(per_benchmark)
    ax.bar(range(len(names)), [per_benchmark[n] for n in names], 0.55,
           color=_ACCENT)
    if average is not None:
        ax.axhline(average, color=_LINE, linestyle="--", linewidth=1.2,
                   label=f"average {average:.2f}")
        ax.legend(fontsize=8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=15, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return render_png(fig)
