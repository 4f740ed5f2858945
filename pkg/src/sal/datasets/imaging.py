"""Image and depth raster IO.

Working pixel representation is float32 RGB in [0, 1]. Write-back rounds
half-up and clamps to 8-bit so closed-form pixel tests are exact to 1/255.
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

from ..errors import DatasetError
from .manifest import DepthMap

F32_MAGIC_HEADER_BYTES = 8  # width, height as uint32 little-endian


def to_float(img_u8: np.ndarray) -> np.ndarray:
    return img_u8.astype(np.float32) / 255.0

def to_uint8(img: np.ndarray) -> np.ndarray:
    # Round half-up: PNG write-back must be reproducible across platforms.
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to float32 RGB in [0, 1] (gray replicated)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"cannot read image file: {path}")
    if raw.dtype == np.uint16:
        raw = (raw / 257.0).astype(np.uint8)
    if raw.ndim == 2:
        rgb = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        rgb = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    else:
        rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return to_float(rgb)


def save_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor(to_uint8(img), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise DatasetError(f"cannot write image file: {path}")


def luma(img: np.ndarray) -> np.ndarray:
    """Grayscale conversion, 0.299 R + 0.587 G + 0.114 B."""
    if img.ndim == 2:
        return img.astype(np.float32)
    return (0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]).astype(np.float32)


def load_depth_png(path: str | Path, scale: float) -> DepthMap:
    """16-bit PNG depth: value / scale -> meters, zeros invalid."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"cannot read depth file: {path}")
    if raw.ndim != 2:
        raise DatasetError(f"depth file is not single channel: {path}")
    values = raw.astype(np.float32) / float(scale)
    return DepthMap(values, raw > 0)


def save_depth_png(path: str | Path, depth_m: np.ndarray, scale: float) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = np.clip(np.round(depth_m * scale), 0, 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), raw):
        raise DatasetError(f"cannot write depth file: {path}")


def load_depth_f32(path: str | Path) -> DepthMap:
    """Raw float32 raster with an 8-byte (width, height) LE header."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read depth file {path}: {exc}") from exc
    if len(blob) < F32_MAGIC_HEADER_BYTES:
        raise DatasetError(f"depth raster too short: {path}")
    width, height = struct.unpack("<II", blob[:F32_MAGIC_HEADER_BYTES])
    expected = F32_MAGIC_HEADER_BYTES + 4 * width * height
    if len(blob) != expected:
        raise DatasetError(f"depth raster size mismatch in {path}: {len(blob)} != {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=F32_MAGIC_HEADER_BYTES).reshape(height, width)
    values = np.ascontiguousarray(values)
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(values, valid)


def save_depth_f32(path: str | Path, depth_m: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = depth_m.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(depth_m, dtype="<f4").tobytes())


def load_depth_file(path: str | Path, png_scale: float) -> DepthMap:
    path = Path(path)
    if path.suffix.lower() == ".f32":
        return load_depth_f32(path)
    return load_depth_png(path, png_scale)
