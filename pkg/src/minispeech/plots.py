"""Figure rendering for experiment reports.

Every report that emits a tab-separated data file also renders a PNG next to
it, so results are inspectable without re-running anything. The Agg backend
keeps this working on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def plot_longform_curves(rows, path) -> Path:
    """Long-form WER against training step, one line per (pattern, seed).
    Rows are (step, pattern, seed, wer) tuples."""
    path = Path(path)
    by_pattern: dict = {}
    for step, pattern, seed, wer in rows:
        by_pattern.setdefault(pattern, {}).setdefault(seed, []).append((step, wer))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for p_idx, (pattern, by_seed) in enumerate(sorted(by_pattern.items())):
        color = _COLORS[p_idx % len(_COLORS)]
        for s_idx, (seed, points) in enumerate(sorted(by_seed.items())):
            points.sort()
            steps = [q[0] for q in points]
            wers = [q[1] for q in points]
            ax.plot(steps, wers, color=color, alpha=0.8,
                    label=pattern if s_idx == 0 else None,
                    linestyle=["-", "--", ":", "-."][s_idx % 4])
    ax.set_xlabel("training step")
    ax.set_ylabel("long-form WER")
    ax.set_title("long-form WER during training")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_rtf_bars(reports, path) -> Path:
    """Throughput (audio seconds per wall second) per attention pattern."""
    path = Path(path)
    labels = [r.pattern for r in reports]
    speeds = [r.speed for r in reports]
    spread = [r.noise_band * r.speed / 2 for r in reports]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), speeds, yerr=spread, capsize=4,
           color=[_COLORS[i % len(_COLORS)] for i in range(len(labels))])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=15, ha="right")
    ax.set_ylabel("audio seconds per wall second (1/RTF)")
    ax.set_title("inference throughput")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
