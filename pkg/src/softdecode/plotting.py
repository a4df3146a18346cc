"""Report figures (PNG) for training logs, evaluation tables and decode timings."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}
COLORS = {"jpeg": "0.55", "pixel": "tab:blue", "wavelet": "tab:orange", "fused": "tab:green"}


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp{path.suffix}")
    fig.savefig(tmp, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def smooth(values: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter at the start)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_training(logs: Mapping[str, Sequence[tuple]], path, jpeg_psnr: Mapping[str, float] | None = None) -> Path:
    """Smoothed loss and validation PSNR for one or more branch logs."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9.6, 3.6))
        for name, rows in logs.items():
            it = np.array([r[0] for r in rows if r[0] > 0])
            loss = np.array([r[1] for r in rows if r[0] > 0])
            color = COLORS.get(name)
            if it.size:
                ax_loss.plot(it, loss, color=color, alpha=0.2, lw=0.6)
                ax_loss.plot(it, smooth(loss), color=color, label=name)
            val = [(r[0], r[3]) for r in rows if np.isfinite(r[3])]
            if val:
                ax_val.plot(*zip(*val), marker="o", ms=3, color=color, label=name)
            if jpeg_psnr and name in jpeg_psnr:
                ax_val.axhline(jpeg_psnr[name], color=color, ls="--", lw=0.8)
        ax_loss.set_yscale("log")
        ax_loss.set_xlabel("iteration")
        ax_loss.set_ylabel("training loss")
        ax_val.set_xlabel("iteration")
        ax_val.set_ylabel("validation PSNR (dB)")
        ax_loss.legend()
        ax_val.legend(title="dashed: JPEG input" if jpeg_psnr else None)
        return _save(fig, path)


def plot_eval(table, path) -> Path:
    """Mean PSNR per method and quality factor, grouped bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        qfs, methods = list(table.qfs), list(table.methods)
        width = 0.8 / len(methods)
        x = np.arange(len(qfs))
        for i, m in enumerate(methods):
            vals = [table.mean(m, q).psnr for q in qfs]
            ax.bar(x + (i - (len(methods) - 1) / 2) * width, vals, width, label=m, color=COLORS.get(m))
        ax.set_xticks(x, [f"QF {q}" for q in qfs])
        ax.set_ylabel("mean PSNR (dB)")
        lo = min(table.mean(m, q).psnr for m in methods for q in qfs)
        ax.set_ylim(max(0.0, lo - 2.0), None)
        ax.legend(ncol=len(methods))
        return _save(fig, path)


def plot_bench(rows: Sequence[tuple[int, str, float]], path) -> Path:
    """Median decode time against image side, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method in dict.fromkeys(r[1] for r in rows):
            pts = sorted((r[0], r[2]) for r in rows if r[1] == method)
            ax.plot(*zip(*pts), marker="o", label=method, color=COLORS.get(method))
        ax.set_xlabel("image side (pixels)")
        ax.set_ylabel("median decode time (s)")
        ax.legend()
        return _save(fig, path)
