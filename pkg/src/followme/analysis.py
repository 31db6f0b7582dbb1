"""Fusion-behavior diagnostics and qualitative trajectory plots.

Contribution strength of an agent is the mean of its fusion gate weights over
both channels and all predicted timesteps; the histogram bins lead and other
agents separately over [0, 1]. The magnitude curves compare the per-timestep
L2 norms of the attention output against the ego embedding (the two operands
of the final residual add), averaged over a trace collection.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .exceptions import EmptySplit, PlotWriteError, ShapeError
from .model import FusionTrace

HIST_BINS = 20


@dataclass(frozen=True)
class ContributionHistogram:
    bin_edges: np.ndarray          # [21]
    lead_counts: np.ndarray        # [20]
    other_counts: np.ndarray       # [20]
    lead_strengths: np.ndarray     # one value per (trace, lead agent)
    other_strengths: np.ndarray    # one value per (trace, valid other agent)
    max_lead_trace: int            # trace index with the strongest lead contribution
    min_lead_trace: int


def contribution_histogram(traces: list[FusionTrace]) -> ContributionHistogram:
    """Bin per-agent contribution strengths; padded agents are excluded."""
    if not traces:
        raise EmptySplit("no traces to histogram")
    lead_vals, other_vals = [], []
    lead_per_trace = np.full(len(traces), np.nan)
    for i, tr in enumerate(traces):
        if tr.weights.shape[2] != len(tr.agent_labels):
            raise ShapeError("trace weights inconsistent with agent labels")
        strengths = tr.weights.mean(axis=(0, 1))
        for label, val in zip(tr.agent_labels, strengths):
            if label == "lead":
                lead_vals.append(val)
                lead_per_trace[i] = val
            elif label == "other":
                other_vals.append(val)
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    lead_vals = np.asarray(lead_vals)
    other_vals = np.asarray(other_vals)
    return ContributionHistogram(
        bin_edges=edges,
        lead_counts=np.histogram(lead_vals, bins=edges)[0],
        other_counts=np.histogram(other_vals, bins=edges)[0],
        lead_strengths=lead_vals,
        other_strengths=other_vals,
        max_lead_trace=int(np.nanargmax(lead_per_trace)),
        min_lead_trace=int(np.nanargmin(lead_per_trace)),
    )


def contribution_magnitude_curve(traces: list[FusionTrace]) -> tuple[np.ndarray, np.ndarray]:
    """(mean ||attention||, mean ||ego embedding||) per predicted timestep."""
    if not traces:
        raise EmptySplit("no traces to average")
    attn = np.mean([tr.attn_norm for tr in traces], axis=0)
    ego = np.mean([tr.ego_embed_norm for tr in traces], axis=0)
    return attn, ego


def save_traces(traces: list[FusionTrace], ids: list[str], path) -> None:
    """Persist traces as flat arrays (weights, norms, labels, window ids)."""
    labels = np.array([",".join(tr.agent_labels) for tr in traces])
    np.savez_compressed(path,
                        weights=np.stack([tr.weights for tr in traces]),
                        attn_norm=np.stack([tr.attn_norm for tr in traces]),
                        ego_embed_norm=np.stack([tr.ego_embed_norm for tr in traces]),
                        labels=labels, ids=np.array(list(ids)))


def load_traces(path) -> tuple[list[FusionTrace], list[str]]:
    with np.load(path, allow_pickle=False) as z:
        traces = [FusionTrace(weights=z["weights"][i], attn_norm=z["attn_norm"][i],
                              ego_embed_norm=z["ego_embed_norm"][i],
                              agent_labels=tuple(str(z["labels"][i]).split(",")))
                  for i in range(z["weights"].shape[0])]
        return traces, [str(s) for s in z["ids"]]


def plot_contribution_histogram(hist: ContributionHistogram, path) -> None:
    """Bar chart of lead vs other contribution strengths."""
    fig, ax = plt.subplots(figsize=(6, 4))
    width = hist.bin_edges[1] - hist.bin_edges[0]
    centers = hist.bin_edges[:-1] + width / 2
    ax.bar(centers - width * 0.2, hist.lead_counts, width * 0.4, label="lead")
    ax.bar(centers + width * 0.2, hist.other_counts, width * 0.4, label="other")
    ax.set_xlabel("contribution strength")
    ax.set_ylabel("agent count")
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise PlotWriteError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def plot_magnitude_curves(attn_curve, ego_curve, path) -> None:
    """Per-timestep attention vs ego-embedding magnitude comparison."""
    fig, ax = plt.subplots(figsize=(6, 4))
    t = np.arange(1, len(attn_curve) + 1)
    ax.plot(t, attn_curve, label="lead+other contribution")
    ax.plot(t, ego_curve, label="ego history embedding")
    ax.set_xlabel("predicted timestep")
    ax.set_ylabel("mean L2 magnitude")
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise PlotWriteError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def plot_predictions(cases, model_sets: dict, out_dir) -> list[str]:
    """Top-down plots of observation, ground truth, and per-model samples.

    cases: list of (case_id, ObservationWindow, EgoTarget); model_sets maps a
    model name to a list of PredictionSet aligned with cases (an empty dict
    draws only observation and ground truth). Returns the files written, one
    per (case, horizon); naming is deterministic.
    """
    os.makedirs(out_dir, exist_ok=True)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    written = []
    for i, (case_id, window, target) in enumerate(cases):
        fig, ax = plt.subplots(figsize=(6, 6))
        obs_ego = window.features[0:2, :, window.ego_index]
        obs_lead = window.features[0:2, :, window.lead_index]
        ax.plot(obs_ego[0], obs_ego[1], "k.-", label="ego observed")
        ax.plot(obs_lead[0], obs_lead[1], "s-", color="tab:gray", ms=3, label="lead observed")
        gt = target.positions
        ax.plot(gt[0], gt[1], "g-", lw=2, label="ego ground truth")
        for m_idx, (name, sets) in enumerate(sorted(model_sets.items())):
            pset = sets[i]
            color = colors[(m_idx + 2) % len(colors)]
            for s_idx in range(pset.m):
                ax.plot(pset.samples[s_idx, 0], pset.samples[s_idx, 1],
                        color=color, alpha=0.25, lw=0.8,
                        label=name if s_idx == 0 else None)
        ax.set_aspect("equal")
        ax.legend(loc="best", fontsize=8)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fname = os.path.join(out_dir, f"{case_id}_h{window.horizon_frames}.png")
        fig.tight_layout()
        try:
            fig.savefig(fname, dpi=120)
        except OSError as exc:
            raise PlotWriteError(f"cannot write {fname}: {exc}") from exc
        finally:
            plt.close(fig)
        written.append(fname)
    return written
