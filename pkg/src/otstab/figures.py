"""Matplotlib renderings of evaluation artifacts (written next to the data
files they visualize; Agg backend, no display needed)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import FeatureStabilityReport  # noqa: E402
from .core import Dataset, SensitiveDistribution  # noqa: E402


def plot_sensitive_scatter(qstar: SensitiveDistribution, data: Dataset, path,
                           model=None) -> None:
    """Originals in grey, perturbed points colored by label and sized by
    weight; only defined for two-feature data."""
    if data.n_features != 2:
        raise ValueError("scatter rendering needs exactly two features")
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    X0, X1 = data.features, qstar.perturbed_points
    ax.scatter(X0[:, 0], X0[:, 1], s=12, c="0.75", label="original")
    sizes = 8.0 + 60.0 * qstar.weights / max(float(np.max(qstar.weights)), 1e-12)
    for label, color in ((1, "tab:blue"), (-1, "tab:red")):
        sel = qstar.labels == label
        ax.scatter(X1[sel, 0], X1[sel, 1], s=sizes[sel], c=color, alpha=0.75,
                   label=f"perturbed (y={label:+d})")
    moved = qstar.transport_costs > 1e-12
    for x0, x1 in zip(X0[moved], X1[moved]):
        ax.plot([x0[0], x1[0]], [x0[1], x1[1]], color="0.6", lw=0.4, zorder=0)
    if model is not None and hasattr(model, "weights"):
        w, b = model.weights, model.bias
        xs = np.linspace(*ax.get_xlim(), 50)
        if abs(w[1]) > 1e-12:
            ax.plot(xs, -(w[0] * xs + b) / w[1], "k--", lw=1.0,
                    label="decision boundary")
    ax.set_xlabel(data.feature_names[0])
    ax.set_ylabel(data.feature_names[1])
    ax.legend(loc="best", fontsize=8)
    ax.set_title("worst-case lift: marker area tracks weight")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_convergence(trace, risk_threshold: float, path) -> None:
    """Weighted risk per evaluation against the target threshold."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if trace:
        iters = range(1, len(trace) + 1)
        risks = [row[2] for row in trace]
        ax.plot(iters, risks, lw=1.2, label="weighted risk")
    ax.axhline(risk_threshold, color="tab:red", ls="--", lw=1.0,
               label="threshold r")
    ax.set_xlabel("iteration")
    ax.set_ylabel("E[W * loss]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_feature_ranking(report: FeatureStabilityReport, path) -> None:
    """Horizontal bars, most sensitive feature on top; unreachable features
    are drawn hatched at the finite maximum."""
    entries = [report.per_feature[[e.index for e in report.per_feature].index(i)]
               for i in report.ranking]
    finite = [e.value for e in entries if math.isfinite(e.value)]
    cap = max(finite) * 1.1 if finite else 1.0
    fig, ax = plt.subplots(figsize=(6.0, 0.5 + 0.4 * len(entries)))
    ys = np.arange(len(entries))[::-1]
    for y, e in zip(ys, entries):
        if math.isfinite(e.value):
            ax.barh(y, e.value, color="tab:blue")
        else:
            ax.barh(y, cap, color="none", edgecolor="tab:grey", hatch="//")
    ax.set_yticks(ys)
    ax.set_yticklabels([e.name for e in entries], fontsize=8)
    ax.set_xlabel("criterion (hatched = threshold unreachable)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
