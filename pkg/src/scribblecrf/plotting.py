"""Report figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no version or timestamp chunks, so reruns give identical bytes
_META = {"Software": None}


def plot_loss_curve(history, path) -> None:
    """pCE, CRF and combined loss per iteration."""
    it = np.arange(len(history))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(it, [r.combined for r in history], label="combined", color="black")
    ax.plot(it, [r.pce for r in history], label="pCE", color="tab:blue")
    ax.plot(it, [r.crf for r in history], label="dense CRF", color="tab:orange")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)


def plot_iou_bars(names, iou, mean, path) -> None:
    """Per-class IoU; absent classes (NaN) are left blank."""
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(names) + 1.5), 4))
    ax.bar(x, np.nan_to_num(np.asarray(iou, dtype=np.float64)), color="tab:blue")
    ax.axhline(mean, color="tab:red", linestyle="--", label=f"mIoU {mean:.3f}")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylim(0, 1.15)
    ax.set_ylabel("IoU")
    ax.legend(loc="upper right", ncol=1)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)
