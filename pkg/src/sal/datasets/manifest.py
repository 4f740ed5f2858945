"""Common sequence interface shared by all dataset adapters."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DatasetError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    baseline_m: float | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DatasetError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DatasetError("principal point must lie inside the image")


@dataclass(frozen=True)
class FrameRecord:
    index: int
    timestamp: float
    images: dict  # stream id -> Path
    depth: Path | None = None

    def __post_init__(self):
        if not np.isfinite(self.timestamp):
            raise DatasetError(f"frame {self.index}: non-finite timestamp")


@dataclass
class DepthMap:
    """Per-pixel metric depth with a validity mask."""

    values: np.ndarray  # float32 meters
    valid: np.ndarray  # bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise DatasetError("depth values and validity mask shapes differ")

    def filled(self) -> np.ndarray:
        """Depth with invalid pixels replaced by the median valid depth."""
        if self.valid.all():
            return self.values
        if not self.valid.any():
            raise DatasetError("depth map has no valid pixels")
        out = self.values.copy()
        out[~self.valid] = np.median(self.values[self.valid])
        return out

    @classmethod
    def constant(cls, depth_m: float, height: int, width: int) -> "DepthMap":
        values = np.full((height, width), float(depth_m), dtype=np.float32)
        return cls(values, np.ones((height, width), dtype=bool))


@dataclass
class SequenceManifest:
    dataset_type: str
    sequence_id: str
    frames: list  # list[FrameRecord], ordered by the adapter's key
    streams: tuple  # ("mono",) or ("left", "right")
    calibration: dict  # stream id -> CameraIntrinsics
    frame_rate_hz: float
    metadata_files: tuple = ()  # sidecars rewritten on frame removal
    dataset_root: Path = Path(".")
    sequence_dir: Path = Path(".")
    depth_scale: float = 5000.0  # 16-bit PNG depth divisor -> meters
    ground_truth: Path | None = None
    plot_plane: str = "xy"  # "xz" for outdoor forward-motion datasets

    def __post_init__(self):
        if not self.frames:
            raise DatasetError(f"empty sequence '{self.sequence_id}'")
        if self.frame_rate_hz <= 0:
            raise DatasetError("frame rate must be positive")
        for pos, frame in enumerate(self.frames):
            if frame.index != pos:
                raise DatasetError(f"frame index {frame.index} does not match position {pos}")
            for stream in self.streams:
                if stream not in frame.images:
                    raise DatasetError(f"frame {pos} has no image for stream '{stream}'")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def reference_stream(self) -> str:
        return self.streams[0]

    def image_relpath(self, index: int, stream: str) -> Path:
        return self.frames[index].images[stream].relative_to(self.dataset_root)
