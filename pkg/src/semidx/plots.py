"""Figure rendering for the report paths.

Every CLI command that writes delimited output can drop a matching PNG next
to it: stage-latency bars for bench reports and loss/accuracy curves for
training logs.  Rendering is headless (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import STAGE_LABELS, StageReport
from .train import EpochMetrics


def plot_stage_latency(reports: list[StageReport], path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    labels = [STAGE_LABELS.get(r.stage, r.stage) for r in reports]
    means = [r.mean_seconds for r in reports]
    bars = ax.bar(labels, means, color="#4878a8")
    ax.set_ylabel("trimmed mean (s)")
    ax.set_title("Per-stage latency")
    ax.bar_label(bars, fmt="%.4g", fontsize=8)
    ax.margins(y=0.15)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_curves(history: list[EpochMetrics], path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    epochs = [r.epoch for r in history]
    ax.plot(epochs, [r.l_final for r in history], label="total loss", color="#4878a8")
    ax.plot(epochs, [r.l_para for r in history], label="parametric", color="#e1812c",
            linewidth=0.9)
    ax.plot(epochs, [r.l_semi_para for r in history], label="semi-parametric",
            color="#3a923a", linewidth=0.9)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.heldout_beta_top1 for r in history], label="held-out top-1",
             color="#b8434e", linestyle="--")
    ax2.set_ylabel("beta-search top-1")
    ax2.set_ylim(0.0, 1.05)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8, loc="center right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
