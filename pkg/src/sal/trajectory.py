"""Timestamped SE(3) trajectories in the TUM text convention.

Line format: ``timestamp tx ty tz qx qy qz qw`` (single spaces, ``#``
comments skipped). This is the common output format every SLAM wrapper
normalizes to, and the input format for all trajectory metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import TrajectoryFormatError


@dataclass(frozen=True)
class Trajectory:
    timestamps: np.ndarray  # (N,) seconds
    positions: np.ndarray  # (N, 3) meters
    quaternions: np.ndarray  # (N, 4) xyzw, unit norm

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        q = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise TrajectoryFormatError("timestamps, positions, quaternions must have equal length")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise TrajectoryFormatError("timestamps must be strictly increasing")
        norms = np.linalg.norm(q, axis=1)
        if len(q) and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise TrajectoryFormatError("quaternions must be unit norm within 1e-6")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "quaternions", q)

    def __len__(self) -> int:
        return len(self.timestamps)

    def pose_matrices(self) -> np.ndarray:
        """(N, 4, 4) homogeneous pose matrices."""
        mats = np.tile(np.eye(4), (len(self), 1, 1))
        if len(self):
            mats[:, :3, :3] = Rotation.from_quat(self.quaternions).as_matrix()
            mats[:, :3, 3] = self.positions
        return mats

    def subset(self, idx) -> "Trajectory":
        return Trajectory(self.timestamps[idx], self.positions[idx], self.quaternions[idx])


def make_trajectory(timestamps, positions, quaternions=None) -> Trajectory:
    """Build a trajectory, normalizing quaternions (identity if omitted)."""
    t = np.asarray(timestamps, dtype=float)
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    if quaternions is None:
        q = np.tile(np.array([0.0, 0.0, 0.0, 1.0]), (len(t), 1))
    else:
        q = np.asarray(quaternions, dtype=float).reshape(-1, 4)
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms <= 0):
            raise TrajectoryFormatError("zero-norm quaternion")
        q = q / norms[:, None]
    return Trajectory(t, p, q)


def parse_tum_trajectory(text: str) -> Trajectory:
    """Parse TUM-format trajectory text."""
    stamps, pos, quat = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise TrajectoryFormatError(f"line {lineno}: expected 8 fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise TrajectoryFormatError(f"line {lineno}: non-numeric field") from None
        stamps.append(values[0])
        pos.append(values[1:4])
        quat.append(values[4:8])
    if not stamps:
        raise TrajectoryFormatError("no pose lines found")
    t = np.asarray(stamps)
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.argmin(np.diff(t))) + 2
        raise TrajectoryFormatError(f"line {bad}: non-monotone timestamp")
    return make_trajectory(t, np.asarray(pos), np.asarray(quat))


def write_tum_trajectory(traj: Trajectory) -> str:
    """Serialize to TUM text.

    Timestamps keep nanosecond precision (epoch stamps survive a round
    trip); pose fields are written with 9 significant digits.
    """
    lines = []
    for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
        vals = " ".join(f"{v:.9g}" for v in (*p, *q))
        lines.append(f"{t:.9f} {vals}")
    return "\n".join(lines) + "\n"


def load_trajectory_file(path: str | Path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TrajectoryFormatError(f"cannot read trajectory file {path}: {exc}") from exc
    return parse_tum_trajectory(text)


def save_trajectory_file(path: str | Path, traj: Trajectory) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(write_tum_trajectory(traj))


def _convert_json_pose_list(path: Path) -> Trajectory:
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TrajectoryFormatError(f"cannot read JSON pose list {path}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise TrajectoryFormatError("json-pose-list: expected a non-empty array")
    stamps, pos, quat = [], [], []
    for i, e in enumerate(entries):
        try:
            stamps.append(float(e["timestamp"]))
            tr = e["translation"]
            qu = e["quaternion"]
            if len(tr) != 3 or len(qu) != 4:
                raise ValueError
            pos.append([float(v) for v in tr])
            quat.append([float(v) for v in qu])
        except (KeyError, TypeError, ValueError):
            raise TrajectoryFormatError(
                f"json-pose-list entry {i}: expected timestamp, translation[3], quaternion[4]"
            ) from None
    return make_trajectory(np.asarray(stamps), np.asarray(pos), np.asarray(quat))


_CONVERTERS = {
    "tum": load_trajectory_file,
    "json-pose-list": _convert_json_pose_list,
}


def convert_trajectory(path: str | Path, format_id: str) -> Trajectory:
    """Convert a raw trajectory file of the given format to a Trajectory."""
    try:
        converter = _CONVERTERS[format_id]
    except KeyError:
        raise TrajectoryFormatError(f"unknown trajectory format '{format_id}'") from None
    return converter(Path(path))
