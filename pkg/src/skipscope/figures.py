"""Static figure rendering for the report path.

Line charts of the per-layer redundancy metrics and the VAR curve,
written as SVG with a pinned style. Output bytes are a pure function of
the inputs: the SVG id hash salt is fixed and the date metadata is
suppressed, so identical invocations produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .attention import VarProfile
from .redundancy import RedundancyProfile
from .traceio import VISION

_STYLE = {
    "svg.hashsalt": "skipscope",
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.8,
    "font.size": 10,
    "svg.fonttype": "none",
}

_COLORS = {"V": "#d62728", "T": "#1f77b4"}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_redundancy_figure(profile: RedundancyProfile, path) -> None:
    """Mean adjacent-layer distance and proximal fraction versus layer."""
    with plt.rc_context(_STYLE):
        fig, (ax_d, ax_p) = plt.subplots(1, 2, figsize=(10.5, 4.2))
        for modality in profile.modalities:
            name = "vision" if modality == VISION else "text"
            color = _COLORS[modality]
            ax_d.plot(profile.layers, profile.mean_cos_dist[modality], label=name, color=color)
            ax_p.plot(profile.layers, profile.proximal_frac[modality], label=name, color=color)
        ax_d.set_xlabel("layer")
        ax_d.set_ylabel("mean cosine distance")
        ax_d.set_title("adjacent-layer distance")
        ax_p.set_xlabel("layer")
        ax_p.set_ylabel(f"fraction below t = {profile.t:g}")
        ax_p.set_ylim(-0.02, 1.02)
        ax_p.set_title("proximal fraction")
        ax_d.legend()
        ax_p.legend()
        fig.tight_layout()
        _save(fig, path)


def save_var_figure(var: VarProfile, path) -> None:
    """Normalized visual attention ratio of the query token versus layer."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(var.layers, var.var_normalized, color="#2ca02c")
        ax.set_xlabel("layer")
        ax.set_ylabel("VAR / heads")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"visual attention ratio, query token {var.query_token}")
        fig.tight_layout()
        _save(fig, path)
