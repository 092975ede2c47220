"""Delimited report tables and the matplotlib figures rendered next to them."""

from __future__ import annotations

import csv
from typing import Mapping, Sequence

import numpy as np
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def fmt(value) -> str:
    """Cell formatting: full-precision floats, empty cell for None/NaN."""
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def plot_propensity_histogram(
    edges: np.ndarray,
    counts_control: np.ndarray,
    counts_treated: np.ndarray,
    title: str,
    path,
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = (edges[:-1] + edges[1:]) / 2
    width = edges[1] - edges[0]
    ax.bar(centers, counts_control, width=width * 0.95, alpha=0.6, label="control")
    ax.bar(centers, counts_treated, width=width * 0.95, alpha=0.6, label="treated")
    ax.set_xlabel("propensity score")
    ax.set_ylabel("admissions")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_pc_low_distribution(
    values_by_model: Mapping[str, np.ndarray], path, bins: int = 20
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    edges = np.linspace(0.0, 1.0, bins + 1)
    for name, values in values_by_model.items():
        ax.hist(values, bins=edges, alpha=0.5, label=name)
    ax.set_xlabel("PC_low")
    ax.set_ylabel("treated admissions with the outcome")
    ax.set_title("PC_low distribution (train set, within common support)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
