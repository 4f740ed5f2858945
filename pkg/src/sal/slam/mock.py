"""Deterministic mock SLAM for desk-scale end-to-end tests.

The mock scores how much each perturbed frame degraded relative to its
clean counterpart (loss of gradient energy), then emits the ground-truth
poses with seeded Gaussian position noise whose scale grows with the mean
degradation. Heavy degradation (mean q above a threshold) is reported as
a tracking failure, mirroring how a real system loses the map.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import SlamRunError
from ..datasets.imaging import load_image, luma
from ..datasets.manifest import SequenceManifest
from ..seeding import rng_from_seed
from ..trajectory import Trajectory, make_trajectory
from .wrappers import SlamRunOutcome

MOCK_SIGMA_BASE_M = 0.01
MOCK_SIGMA_DEGRADATION_M = 2.0
MOCK_FAILURE_MEAN_Q = 0.9


@dataclass(frozen=True)
class MockSlamInputs:
    manifest: SequenceManifest
    ground_truth: Trajectory
    baseline_root: Path
    seed: int

    def __iter__(self):
        yield self.manifest
        yield self.ground_truth
        yield self.baseline_root
        yield self.seed


def gradient_energy(image: np.ndarray) -> float:
    """Mean squared luma gradient magnitude."""
    gray = luma(image)
    gy, gx = np.gradient(gray)
    return float(np.mean(gx * gx + gy * gy))


def frame_degradation(perturbed: np.ndarray, baseline: np.ndarray) -> float:
    """q = 1 - gradient-energy ratio, clamped to [0, 1]."""
    base = gradient_energy(baseline)
    if base < 1e-12:
        return 0.0
    return float(np.clip(1.0 - gradient_energy(perturbed) / base, 0.0, 1.0))


def mock_slam_run(
    manifest: SequenceManifest,
    ground_truth: Trajectory,
    baseline_root: Path,
    seed: int,
    sigma_base: float = MOCK_SIGMA_BASE_M,
    sigma_degradation: float = MOCK_SIGMA_DEGRADATION_M,
    failure_mean_q: float = MOCK_FAILURE_MEAN_Q,
) -> SlamRunOutcome:
    """Run the mock on a (possibly perturbed) sequence manifest."""
    baseline_root = Path(baseline_root)
    stream = manifest.reference_stream

    qs = []
    for frame in manifest.frames:
        rel = frame.images[stream].relative_to(manifest.dataset_root)
        baseline_path = baseline_root / rel
        if not baseline_path.exists():
            raise SlamRunError(f"baseline frame missing for degradation scoring: {baseline_path}")
        qs.append(frame_degradation(load_image(frame.images[stream]), load_image(baseline_path)))
    mean_q = float(np.mean(qs))

    stamps = np.array([f.timestamp for f in manifest.frames])
    gt_idx = []
    for t in stamps:
        j = int(np.argmin(np.abs(ground_truth.timestamps - t)))
        if abs(ground_truth.timestamps[j] - t) > 0.5 / manifest.frame_rate_hz:
            raise SlamRunError(f"ground truth does not cover frame at t={t:.6f}")
        gt_idx.append(j)
    gt_idx = np.asarray(gt_idx)

    log = f"mock: mean degradation q={mean_q:.4f} over {len(qs)} frames"
    if mean_q > failure_mean_q:
        return SlamRunOutcome("tracking_failure", None, log)

    sigma = sigma_base + sigma_degradation * mean_q
    noise = rng_from_seed(seed).normal(0.0, 1.0, size=(len(gt_idx), 3))
    positions = ground_truth.positions[gt_idx] + sigma * noise
    trajectory = make_trajectory(stamps, positions, ground_truth.quaternions[gt_idx])
    return SlamRunOutcome("completed", trajectory, log + f", sigma={sigma:.4f}")
