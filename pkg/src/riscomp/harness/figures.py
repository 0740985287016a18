"""Figure rendering for the experiment report path.

One PNG per experiment, written alongside the delimited output. Uses the Agg
backend and strips writer metadata so repeated runs produce identical bytes.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .experiments import ResultTable

_RC = {
    "figure.figsize": (5.2, 3.6),
    "figure.dpi": 130,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.35,
    "lines.linewidth": 1.4,
    "lines.markersize": 4.5,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}

_MODE_LABELS = {
    "full": "proposed",
    "am_fp": "AM-FP",
    "am_es": "AM-ES",
    "without_ris": "without RIS",
    "without_ct": "without CT",
    "without_ris_ct": "without RIS+CT",
}

_AXIS_LABELS = {
    "feasibility_vs_sinr": ("target downlink SINR (dB)", "feasibility ratio"),
    "ce_vs_sinr": ("target downlink SINR (dB)", "computation efficiency (bits/J)"),
    "ce_vs_elements": ("reflecting elements", "computation efficiency (bits/J)"),
    "runtime_vs_size": ("access points", "wall time (s)"),
    "partition_vs_distance": ("user-RIS distance (m)", "mean power partition"),
    "aps_per_user": ("swept count", "mean APs per user"),
    "convergence_trace": ("outer iteration", "computation efficiency (bits/J)"),
}

_PRIMARY_METRIC = {
    "feasibility_vs_sinr": "feasible",
    "ce_vs_sinr": "ce",
    "ce_vs_elements": "ce",
    "runtime_vs_size": "wall_time",
    "partition_vs_distance": "a_swept",
    "aps_per_user": "mean_aps_per_user",
}


def _modes(table: ResultTable):
    return sorted({r.mode for r in table.raw_rows()})


def render_figure(table: ResultTable, experiment: str, out_dir,
                  name: str = None) -> str:
    """Render the experiment's summary figure; returns the file path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, (name or experiment) + ".png")
    xlabel, ylabel = _AXIS_LABELS.get(experiment, ("sweep", "value"))

    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        if experiment == "convergence_trace":
            iters = sorted({int(r.metric[-2:]) for r in table.raw_rows()
                            if r.metric.startswith("ce_iter")})
            for mode in _modes(table):
                series = [table.mean(f"ce_iter{i:02d}", mode=mode)
                          for i in iters]
                ax.plot(iters, series, marker="o",
                        label=_MODE_LABELS.get(mode, mode))
        else:
            metric = _PRIMARY_METRIC.get(experiment, "ce")
            sweeps = table.sweeps()
            for mode in _modes(table):
                means = [table.mean(metric, mode=mode, sweep=s) for s in sweeps]
                ax.plot(sweeps, means, marker="o",
                        label=_MODE_LABELS.get(mode, mode))
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
