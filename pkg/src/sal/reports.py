"""Report and plot emission for SLAM evaluation runs.

Output tree per algorithm (under <output_base>/<experiment>/slam_results/):

    <algorithm>/
      trajectories/run_<N>/{baseline.txt, <perturbation>.txt}
      metrics/run_<N>/baseline/ate.json
      metrics/run_<N>/<perturbation>/{ate.json, vs_baseline.json}
      metrics/comparison/run_<N>/ate_comparison.png
      metrics/summary.json
      metrics/aggregated_metrics.png
      trajectory_plots/comparison/run_<N>/trajectory_comparison_<perturbation>.png

rpe.json files are written alongside each ate.json.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .metrics import AteStats, MetricsReport, RpeStats, delta_percent  # noqa: E402
from .slam.wrappers import SlamRunOutcome  # noqa: E402
from .trajectory import Trajectory, save_trajectory_file  # noqa: E402


@dataclass
class RunEntry:
    """One SLAM execution with its metrics vs ground truth."""

    name: str  # "baseline" or the perturbation name
    outcome: SlamRunOutcome
    ate: AteStats | None = None
    rpe: RpeStats | None = None

    @property
    def rmse(self) -> float | None:
        return self.ate.rmse if self.ate is not None else None


@dataclass
class RunRecord:
    run_index: int
    baseline: RunEntry
    perturbed: list = field(default_factory=list)  # RunEntry, config order


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _entry_metrics_payload(entry: RunEntry) -> dict:
    if entry.outcome.failed or entry.ate is None:
        return {"status": entry.outcome.status, "rmse": None}
    payload = entry.ate.to_dict()
    payload["status"] = "completed"
    return payload


def _vs_baseline_payload(entry: RunEntry, baseline: RunEntry) -> dict:
    payload = {
        "baseline_rmse": baseline.rmse,
        "perturbed_rmse": entry.rmse,
        "status": entry.outcome.status,
        "delta_percent": None,
    }
    if entry.rmse is not None and baseline.rmse:
        payload["delta_percent"] = delta_percent(baseline.rmse, entry.rmse)
    return payload


def _plot_axes_for_plane(plane: str):
    return (0, 2, "x [m]", "z [m]") if plane == "xz" else (0, 1, "x [m]", "y [m]")


def _plot_trajectories(path: Path, plane: str, named: list, title: str) -> None:
    ix, iy, xlabel, ylabel = _plot_axes_for_plane(plane)
    fig, ax = plt.subplots(figsize=(6, 5))
    for label, traj, style in named:
        ax.plot(traj.positions[:, ix], traj.positions[:, iy], style, label=label, linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def _plot_rmse_bars(path: Path, labels: list, values: list, errors=None, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(labels)), 4))
    xs = np.arange(len(labels))
    plotted = [v if v is not None else 0.0 for v in values]
    ax.bar(xs, plotted, yerr=errors, capsize=3, color="#4878a8")
    for x, v in zip(xs, values):
        if v is None:
            ax.text(x, 0, "x", ha="center", va="bottom", color="red", fontsize=14)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("ATE RMSE [m]")
    ax.set_title(title)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def emit_run_reports(
    algo_dir: Path,
    record: RunRecord,
    ground_truth: Trajectory | None,
    plot_plane: str,
) -> list[Path]:
    """Write trajectories, metrics and comparison plots for one run."""
    algo_dir = Path(algo_dir)
    n = record.run_index
    written: list[Path] = []

    traj_dir = algo_dir / "trajectories" / f"run_{n}"
    entries = [record.baseline] + record.perturbed
    for entry in entries:
        if entry.outcome.trajectory is not None:
            out = traj_dir / f"{entry.name}.txt"
            save_trajectory_file(out, entry.outcome.trajectory)
            written.append(out)

    metrics_dir = algo_dir / "metrics" / f"run_{n}"
    for entry in entries:
        ate_path = metrics_dir / entry.name / "ate.json"
        _write_json(ate_path, _entry_metrics_payload(entry))
        written.append(ate_path)
        if entry.rpe is not None:
            rpe_path = metrics_dir / entry.name / "rpe.json"
            _write_json(rpe_path, entry.rpe.to_dict())
            written.append(rpe_path)
        if entry.name != "baseline":
            vs_path = metrics_dir / entry.name / "vs_baseline.json"
            _write_json(vs_path, _vs_baseline_payload(entry, record.baseline))
            written.append(vs_path)

    comparison = algo_dir / "metrics" / "comparison" / f"run_{n}" / "ate_comparison.png"
    _plot_rmse_bars(
        comparison,
        [e.name for e in entries],
        [e.rmse for e in entries],
        title=f"ATE across perturbation settings (run {n})",
    )
    written.append(comparison)

    plot_dir = algo_dir / "trajectory_plots" / "comparison" / f"run_{n}"
    for entry in record.perturbed:
        named = []
        if ground_truth is not None:
            named.append(("ground truth", ground_truth, "k--"))
        if record.baseline.outcome.trajectory is not None:
            named.append(("baseline", record.baseline.outcome.trajectory, "g-"))
        if entry.outcome.trajectory is not None:
            named.append((entry.name, entry.outcome.trajectory, "r-"))
        out = plot_dir / f"trajectory_comparison_{entry.name}.png"
        _plot_trajectories(out, plot_plane, named, f"{entry.name} vs baseline")
        written.append(out)
    return written


def emit_summary(algo_dir: Path, experiment: str, algorithm: str, report: MetricsReport, runs: int) -> Path:
    """Aggregate statistics across runs: summary.json + aggregated plot."""
    algo_dir = Path(algo_dir)
    perturbations = {}
    for level in report.levels:
        perturbations[level.name] = {
            "clean_rmse": report.clean.rmse_mean,
            "per_level_rmse": {level.name: level.rmse_mean},
            "rmse_per_run": list(level.rmse_per_run),
            "rmse_std": level.rmse_std,
            "delta_percent": (
                delta_percent(report.clean.rmse_mean, level.rmse_mean)
                if level.rmse_mean is not None
                else None
            ),
            "tracking_failures": sum(1 for r in level.rmse_per_run if r is None),
        }
    payload = {
        "experiment": experiment,
        "algorithm": algorithm,
        "runs": runs,
        "baseline": {
            "rmse_per_run": list(report.clean.rmse_per_run),
            "rmse_mean": report.clean.rmse_mean,
            "rmse_std": report.clean.rmse_std,
        },
        "perturbations": perturbations,
        "headline_delta_percent": report.delta_percent,
        "headline_delta_level": report.delta_level,
    }
    summary_path = algo_dir / "metrics" / "summary.json"
    _write_json(summary_path, payload)

    labels = ["baseline"] + [lvl.name for lvl in report.levels]
    values = [report.clean.rmse_mean] + [lvl.rmse_mean for lvl in report.levels]
    errors = [report.clean.rmse_std or 0.0] + [lvl.rmse_std or 0.0 for lvl in report.levels]
    _plot_rmse_bars(
        algo_dir / "metrics" / "aggregated_metrics.png",
        labels,
        values,
        errors=errors,
        title=f"{algorithm}: mean ATE RMSE over {runs} run(s)",
    )
    return summary_path
