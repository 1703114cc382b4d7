"""Interpretability export: posterior edge probabilities per sub-interval.

Writes one row per (sequence, interval, target, source) with the posterior
probability that the edge latent is not the no-dependency type, an aggregate
table averaged over sequences, and one heatmap image per interval.
"""

from __future__ import annotations

import csv
import os

import numpy as np
import torch

from .data import EventSequence
from .model import VAETPP


class UnsupportedModelError(ValueError):
    """Raised when graph export is requested for a model without edge latents."""


@torch.no_grad()
def edge_probability_table(
    model: VAETPP, sequences: list[EventSequence]
) -> list[tuple[str, int, int, int, float]]:
    """Rows (seq_id, interval, target, source, P[edge != none])."""
    if not isinstance(model, VAETPP):
        raise UnsupportedModelError(
            f"{type(model).__name__} has no latent graphs to export"
        )
    target = model.pair_target.tolist()
    source = model.pair_source.tolist()
    rows = []
    for seq in sequences:
        logits = model.posterior_logits(seq)  # (K,P,E)
        probs = 1.0 - torch.softmax(logits, dim=-1)[..., 0]
        for k in range(model.num_intervals):
            for p in range(model.num_pairs):
                rows.append((seq.seq_id, k, target[p], source[p], float(probs[k, p])))
    return rows


def aggregate_edge_probabilities(
    model: VAETPP, sequences: list[EventSequence]
) -> np.ndarray:
    """Mean posterior edge probability over sequences, shape (K, U, U).

    Self-pairs, which carry no latent, are left at zero.
    """
    rows = edge_probability_table(model, sequences)
    agg = np.zeros((model.num_intervals, model.num_types, model.num_types))
    count = max(len(sequences), 1)
    for _, k, v, u, p in rows:
        agg[k, v, u] += p / count
    return agg


def export_graphs(
    model: VAETPP, sequences: list[EventSequence], out_dir: str
) -> dict[str, str | list[str]]:
    """Write the per-sequence table, the aggregate table and interval heatmaps."""
    rows = edge_probability_table(model, sequences)
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "edges.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq_id", "k", "v", "u", "p_edge"])
        writer.writerows(rows)
    agg = aggregate_edge_probabilities(model, sequences)
    agg_path = os.path.join(out_dir, "aggregate.csv")
    with open(agg_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "v", "u", "mean_p_edge"])
        for k in range(agg.shape[0]):
            for v in range(agg.shape[1]):
                for u in range(agg.shape[2]):
                    if u != v:
                        writer.writerow([k, v, u, agg[k, v, u]])
    plot_paths = _plot_heatmaps(agg, out_dir)
    return {"table": table_path, "aggregate": agg_path, "plots": plot_paths}


def _plot_heatmaps(agg: np.ndarray, out_dir: str) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for k in range(agg.shape[0]):
        fig, ax = plt.subplots(figsize=(4, 3.5))
        im = ax.imshow(agg[k], vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_xlabel("source type u")
        ax.set_ylabel("target type v")
        ax.set_title(f"mean P[edge] in interval {k}")
        fig.colorbar(im, ax=ax)
        path = os.path.join(out_dir, f"graph_k{k}.png")
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
