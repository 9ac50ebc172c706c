"""Output writers: delimited tables, JSON reports and matplotlib figures.

Every experiment's report path writes CSV tables with named header rows,
a JSON report, and PNG figures rendered from the same data.  Formatting is
deterministic (fixed float format, sorted JSON keys, pinned PNG metadata)
so reruns are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": "hypokernel"}


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_coerce) + "\n")
    return path


def _coerce(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def save_figure(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def line_figure(path: Path, x, ys: dict[str, np.ndarray], xlabel: str, ylabel: str,
                title: str, logy: bool = False, logx: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, y in ys.items():
        ax.plot(x, y, marker="o", ms=3.5, lw=1.2, label=label)
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return save_figure(fig, path)


def hist_figure(path: Path, values: np.ndarray, bins: int, xlabel: str,
                title: str, logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.hist(values, bins=bins, color="#33557a", alpha=0.85)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return save_figure(fig, path)


def heatmap_figure(path: Path, x_axis, y_axis, grid: np.ndarray, xlabel: str,
                   ylabel: str, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.8))
    mesh = ax.pcolormesh(x_axis, y_axis, grid.T, shading="auto")
    fig.colorbar(mesh, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return save_figure(fig, path)


def bar_figure(path: Path, labels: list[str], values, errors, ylabel: str,
               title: str, hline: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.8, 4.2))
    pos = np.arange(len(labels))
    ax.bar(pos, values, yerr=errors, color="#33557a", alpha=0.85, capsize=3)
    if hline is not None:
        ax.axhline(hline, color="#a03030", lw=1.0, ls="--")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=25, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return save_figure(fig, path)
