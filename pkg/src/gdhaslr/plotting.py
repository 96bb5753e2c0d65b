"""Matplotlib figures written next to benchmark and recognition outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imagekit import unvec  # noqa: E402

STYLE = {
    "font.size": 10.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.6,
    "lines.markersize": 5.0,
    "savefig.dpi": 120,
    "figure.figsize": (5.0, 3.4),
}

# keep PNG bytes stable between runs
_PNG_META = {"Software": None}


def figure_path(report_path, suffix: str) -> Path:
    """``out/report.json`` -> ``out/report_<suffix>.png``."""
    p = Path(report_path)
    return p.with_name(f"{p.stem}_{suffix}.png")


def accuracy_curve(subsets: dict, path, title: str = "Accuracy vs. occlusion rate") -> Path:
    """Plot subset accuracy against occlusion rate (subset keys are rates)."""
    keys = sorted(subsets, key=float)
    rates = [float(k) for k in keys]
    acc = [subsets[k] for k in keys]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(rates, acc, marker="o")
        ax.set_xlabel("occlusion rate")
        ax.set_ylabel("recognition accuracy")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
    return Path(path)


def singular_value_curves(errors, shape, path, labels=None) -> Path:
    """Normalized singular-value decay of each recovered error map."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, L in enumerate(errors):
            s = np.linalg.svd(unvec(L, shape), compute_uv=False)
            if s[0] > 0:
                s = s / s[0]
            name = labels[i] if labels else f"order {i + 1}"
            ax.plot(np.arange(1, s.size + 1), s, marker=".", label=name)
        ax.set_xlabel("index")
        ax.set_ylabel(r"$\sigma_i / \sigma_1$")
        ax.set_title("Error-map singular values")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
    return Path(path)
