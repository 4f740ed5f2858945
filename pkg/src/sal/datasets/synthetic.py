"""Desk-scale synthetic sequence generator.

Writes a KITTI-layout sequence (textured frames, analytic depth rasters,
calibration, timestamps and a TUM-format ground-truth trajectory) so the
whole pipeline can be exercised without any real dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from ..seeding import rng_from_seed
from ..trajectory import Trajectory, make_trajectory, save_trajectory_file
from .adapters import open_sequence
from .imaging import save_depth_f32, save_image
from .manifest import SequenceManifest


@dataclass(frozen=True)
class SyntheticSpec:
    n_frames: int
    width: int = 320
    height: int = 240
    texture: str = "checkerboard"  # or "noise"
    checker_px: int = 16
    depth_model: tuple = ("constant", 10.0)  # or ("ground_plane", near_m, far_m)
    forward_m_per_frame: float = 0.5
    frame_rate_hz: float = 10.0
    seed: int = 0
    stereo: bool = False
    sequence_id: str = "00"

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.texture not in ("checkerboard", "noise"):
            raise ValueError(f"unknown texture '{self.texture}'")
        if self.depth_model[0] not in ("constant", "ground_plane"):
            raise ValueError(f"unknown depth model '{self.depth_model[0]}'")


def _checkerboard(width: int, height: int, cell: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    board = ((xs // cell + ys // cell) % 2).astype(np.float32)
    img = 0.15 + 0.7 * board
    return np.repeat(img[:, :, None], 3, axis=2)


def _band_limited_noise(width: int, height: int, seed: int, cell: int = 16) -> np.ndarray:
    rng = rng_from_seed(seed)
    lattice = rng.uniform(0.2, 0.8, size=(height // cell + 2, width // cell + 2)).astype(np.float32)
    smooth = cv2.resize(lattice, (width, height), interpolation=cv2.INTER_LINEAR)
    return np.repeat(smooth[:, :, None], 3, axis=2)


def _depth_plane(spec: SyntheticSpec) -> np.ndarray:
    if spec.depth_model[0] == "constant":
        return np.full((spec.height, spec.width), float(spec.depth_model[1]), dtype=np.float32)
    _, near, far = spec.depth_model
    # Bottom row nearest, increasing linearly toward the top row.
    row = np.linspace(float(far), float(near), spec.height, dtype=np.float32)
    return np.repeat(row[:, None], spec.width, axis=1)


def generate_synthetic_sequence(spec: SyntheticSpec, root: str | Path) -> tuple[SequenceManifest, Trajectory]:
    """Write the sequence under root and return (manifest, ground truth)."""
    root = Path(root)
    seq_dir = root / "sequences" / spec.sequence_id
    image_dir = seq_dir / "image_2"
    depth_dir = seq_dir / "depth_2"
    image_dir.mkdir(parents=True, exist_ok=True)
    depth_dir.mkdir(parents=True, exist_ok=True)

    if spec.texture == "checkerboard":
        frame = _checkerboard(spec.width, spec.height, spec.checker_px)
    else:
        frame = _band_limited_noise(spec.width, spec.height, spec.seed)
    depth = _depth_plane(spec)

    for i in range(spec.n_frames):
        save_image(image_dir / f"{i:06d}.png", frame)
        save_depth_f32(depth_dir / f"{i:06d}.f32", depth)
        if spec.stereo:
            save_image(seq_dir / "image_3" / f"{i:06d}.png", frame)

    f = 0.9 * max(spec.width, spec.height)
    cx, cy = spec.width / 2.0, spec.height / 2.0
    baseline = 0.5
    p2 = f"P2: {f} 0 {cx} 0 0 {f} {cy} 0 0 0 1 0"
    p3 = f"P3: {f} 0 {cx} {-f * baseline} 0 {f} {cy} 0 0 0 1 0"
    (seq_dir / "calib.txt").write_text(p2 + "\n" + p3 + "\n")

    stamps = np.arange(spec.n_frames) / spec.frame_rate_hz
    (seq_dir / "times.txt").write_text("".join(f"{t:.6f}\n" for t in stamps))

    positions = np.zeros((spec.n_frames, 3))
    positions[:, 2] = spec.forward_m_per_frame * np.arange(spec.n_frames)
    gt = make_trajectory(stamps, positions)
    save_trajectory_file(seq_dir / "groundtruth.txt", gt)

    manifest = open_sequence("kitti", root, spec.sequence_id, load_stereo=spec.stereo)
    return manifest, gt
