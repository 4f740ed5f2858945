"""Trajectory error metrics: association, alignment, ATE, RPE, aggregation.

ATE is the per-pose Euclidean position error after optional closed-form
alignment (rigid se3 or similarity sim3); RPE measures relative motion
error over a fixed frame interval, isolating drift from global alignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssociationError, DegenerateGeometryError, MetricsError
from .trajectory import Trajectory

ALIGNMENT_MODES = ("none", "se3", "sim3")


def associate(reference: Trajectory, estimate: Trajectory, max_dt: float = 0.02):
    """Greedy nearest-timestamp pairing within max_dt, each pose used once.

    Returns (ref_indices, est_indices) ordered by time.
    """
    if len(reference) == 0 or len(estimate) == 0:
        raise AssociationError("cannot associate an empty trajectory")
    rt, et = reference.timestamps, estimate.timestamps
    candidates = []
    for i, t in enumerate(rt):
        j0 = int(np.searchsorted(et, t))
        for j in (j0 - 1, j0):
            if 0 <= j < len(et) and abs(et[j] - t) <= max_dt:
                candidates.append((abs(et[j] - t), i, j))
    candidates.sort()
    used_ref: set = set()
    used_est: set = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_ref or j in used_est:
            continue
        used_ref.add(i)
        used_est.add(j)
        pairs.append((i, j))
    if not pairs:
        raise AssociationError(f"no trajectory pairs within {max_dt} s")
    pairs.sort()
    idx = np.array(pairs)
    return idx[:, 0], idx[:, 1]


def umeyama_alignment(ref_points: np.ndarray, est_points: np.ndarray, with_scale: bool = False):
    """Least-squares (s, R, t) minimizing sum ||ref - (s R est + t)||^2.

    Returns (R, t, s); s is fixed to 1 when with_scale is False. Raises
    DegenerateGeometryError for collinear or coincident point sets.
    """
    ref = np.asarray(ref_points, dtype=float).reshape(-1, 3)
    est = np.asarray(est_points, dtype=float).reshape(-1, 3)
    if ref.shape != est.shape:
        raise MetricsError("point sets must have equal shape")
    n = len(ref)
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 point pairs, got {n}")

    mu_ref = ref.mean(axis=0)
    mu_est = est.mean(axis=0)
    ref_c = ref - mu_ref
    est_c = est - mu_est

    var_est = float(np.mean(np.sum(est_c**2, axis=1)))
    if var_est < 1e-15:
        raise DegenerateGeometryError("estimate points are coincident")

    cov = ref_c.T @ est_c / n
    U, d, Vt = np.linalg.svd(cov)
    if d[1] <= 1e-12 * max(d[0], 1e-300):
        raise DegenerateGeometryError("point sets are collinear; rotation is not observable")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(d) @ S) / var_est) if with_scale else 1.0
    t = mu_ref - s * R @ mu_est
    return R, t, s


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    median: float
    std: float
    min: float
    max: float
    n_pairs: int

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "ErrorStats":
        e = np.asarray(errors, dtype=float)
        return cls(
            rmse=float(np.sqrt(np.mean(e**2))),
            mean=float(np.mean(e)),
            median=float(np.median(e)),
            std=float(np.std(e)),
            min=float(np.min(e)),
            max=float(np.max(e)),
            n_pairs=int(e.size),
        )

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "n_pairs": self.n_pairs,
        }


@dataclass(frozen=True)
class AteStats:
    stats: ErrorStats
    alignment: str
    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    @property
    def rmse(self) -> float:
        return self.stats.rmse

    def to_dict(self) -> dict:
        out = self.stats.to_dict()
        out["alignment"] = self.alignment
        out["scale"] = self.scale
        return out


@dataclass(frozen=True)
class RpeStats:
    stats: ErrorStats
    delta: int
    delta_unit: str = "frames"

    @property
    def rmse(self) -> float:
        return self.stats.rmse

    def to_dict(self) -> dict:
        out = self.stats.to_dict()
        out["delta"] = self.delta
        out["delta_unit"] = self.delta_unit
        return out


def ate(reference: Trajectory, estimate: Trajectory, align: str = "none", max_dt: float = 0.02) -> AteStats:
    """Absolute trajectory error over associated, optionally aligned poses."""
    if align not in ALIGNMENT_MODES:
        raise MetricsError(f"unknown alignment mode '{align}'")
    ri, ei = associate(reference, estimate, max_dt)
    ref = reference.positions[ri]
    est = estimate.positions[ei]
    if align == "none":
        R, t, s = np.eye(3), np.zeros(3), 1.0
    else:
        R, t, s = umeyama_alignment(ref, est, with_scale=(align == "sim3"))
    aligned = (s * (R @ est.T)).T + t
    errors = np.linalg.norm(ref - aligned, axis=1)
    return AteStats(ErrorStats.from_errors(errors), align, R, t, s)


def rpe(reference: Trajectory, estimate: Trajectory, delta: int = 1, max_dt: float = 0.02) -> RpeStats:
    """Relative pose error over a fixed frame interval (translational)."""
    if delta < 1:
        raise MetricsError("delta must be >= 1")
    ri, ei = associate(reference, estimate, max_dt)
    if len(ri) < delta + 1:
        raise MetricsError(f"need at least delta+1={delta + 1} pairs, got {len(ri)}")
    Q = reference.subset(ri).pose_matrices()
    P = estimate.subset(ei).pose_matrices()
    errors = []
    for i in range(len(Q) - delta):
        ref_rel = np.linalg.inv(Q[i]) @ Q[i + delta]
        est_rel = np.linalg.inv(P[i]) @ P[i + delta]
        E = np.linalg.inv(ref_rel) @ est_rel
        errors.append(np.linalg.norm(E[:3, 3]))
    return RpeStats(ErrorStats.from_errors(np.asarray(errors)), delta)


# ---------------------------------------------------------------------------
# Multi-run aggregation


@dataclass(frozen=True)
class LevelAggregate:
    """Per-severity-level statistics across runs."""

    name: str
    rmse_per_run: tuple  # float or None (tracking failure) per run
    rmse_mean: float | None
    rmse_std: float | None
    failed: bool  # no run completed

    @classmethod
    def from_runs(cls, name: str, rmses) -> "LevelAggregate":
        values = [r for r in rmses if r is not None]
        if not values:
            return cls(name, tuple(rmses), None, None, True)
        return cls(name, tuple(rmses), float(np.mean(values)), float(np.std(values)), False)


@dataclass(frozen=True)
class MetricsReport:
    clean: LevelAggregate
    levels: tuple  # LevelAggregate, ordered mildest..most severe
    delta_percent: float | None
    delta_level: str | None


def delta_percent(clean_rmse: float, perturbed_rmse: float) -> float:
    """Percent change from clean to perturbed ATE RMSE."""
    if clean_rmse == 0:
        raise MetricsError("clean RMSE is zero; delta percent undefined")
    return 100.0 * (perturbed_rmse - clean_rmse) / clean_rmse


def aggregate_runs(level_rmses, clean_rmses) -> MetricsReport:
    """Aggregate per-run RMSEs across severity levels.

    level_rmses: ordered (name, [rmse or None per run]) pairs, mildest
    first. The headline delta is computed at the most severe level, or the
    next one down whenever the most severe level failed in every run.
    """
    clean = LevelAggregate.from_runs("clean", list(clean_rmses))
    levels = tuple(LevelAggregate.from_runs(name, list(rmses)) for name, rmses in level_rmses)
    if clean.failed:
        raise MetricsError("clean baseline has no completed run")

    delta = None
    delta_level = None
    for level in reversed(levels):
        if not level.failed:
            delta = delta_percent(clean.rmse_mean, level.rmse_mean)
            delta_level = level.name
            break
    return MetricsReport(clean=clean, levels=levels, delta_percent=delta, delta_level=delta_level)
