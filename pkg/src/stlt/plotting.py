"""Convergence figures rendered from an iteration history."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Panels drawn by :func:`plot_history`: (column, y label, file stem).
PANELS = (
    ("grad_norm", "gradient norm", "grad_norm"),
    ("rel_gap", "relative duality gap", "rel_gap"),
)


def read_history(path):
    """Columns of a ``history.csv`` as float arrays (blank cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {key: np.array([float(r[key]) if r[key] != "" else np.nan for r in rows]) for key in rows[0]}


def _positive(y):
    # log axes cannot show exact zeros; drop them rather than invent a floor
    y = np.asarray(y, dtype=float)
    return np.where(y > 0, y, np.nan)


def plot_series(iters, values, ylabel, path, title=None):
    """One log-scale line plot written to ``path`` (format from the suffix)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "stlt", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        ax.semilogy(iters, _positive(values), marker=".", lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        meta = {"Date": None} if path.suffix == ".svg" else {}
        fig.savefig(path, metadata=meta)
        plt.close(fig)
    return path


def plot_history(history, out_dir, title=None):
    """Write ``grad_norm.svg`` and ``rel_gap.svg`` into ``out_dir``.

    ``history`` is either a path to ``history.csv`` or a mapping of columns.
    Returns the written paths.
    """
    cols = read_history(history) if isinstance(history, (str, Path)) else history
    out_dir = Path(out_dir)
    if not cols:
        return []
    return [
        plot_series(cols["iter"], cols[key], label, out_dir / f"{stem}.svg", title)
        for key, label, stem in PANELS
    ]
