"""Dataset adapters: map each on-disk layout to the common manifest.

Expected layouts:
  kitti:  <root>/sequences/<seq>/image_2/%06d.png (+ image_3/ for stereo),
          optional times.txt, calib.txt, depth_2/ cache, groundtruth.txt
  tum:    <root>/<seq>/rgb/, depth/, optional rgb.txt / depth.txt,
          groundtruth.txt
  euroc:  <root>/<seq>/mav0/cam{0,1}/data/*.png with data.csv
          (header line, rows "timestamp_ns,filename")
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from ..errors import DatasetError
from .imaging import load_depth_file, load_image
from .manifest import CameraIntrinsics, DepthMap, FrameRecord, SequenceManifest

_FRAME_RATES = {"kitti": 10.0, "tum": 30.0, "euroc": 20.0}
TUM_DEPTH_ASSOC_TOLERANCE_S = 0.02
TUM_DEPTH_SCALE = 5000.0


def open_sequence(
    dataset_type: str,
    root: str | Path,
    sequence_id: str,
    max_frames: int | None = None,
    load_stereo: bool = False,
) -> SequenceManifest:
    """Open a dataset sequence and return its manifest."""
    root = Path(root)
    if dataset_type == "kitti":
        manifest = _open_kitti(root, sequence_id, load_stereo)
    elif dataset_type == "tum":
        manifest = _open_tum(root, sequence_id, load_stereo)
    elif dataset_type == "euroc":
        manifest = _open_euroc(root, sequence_id, load_stereo)
    else:
        raise DatasetError(f"unknown dataset type '{dataset_type}'")
    if max_frames is not None:
        if max_frames < 1:
            raise DatasetError("max_frames must be >= 1")
        manifest.frames = manifest.frames[:max_frames]
    return manifest


def _default_intrinsics(image_path: Path, baseline: float | None = None) -> CameraIntrinsics:
    img = load_image(image_path)
    h, w = img.shape[:2]
    return CameraIntrinsics(fx=float(max(w, h)), fy=float(max(w, h)), cx=w / 2.0, cy=h / 2.0,
                            width=w, height=h, baseline_m=baseline)


def _numeric_stem_key(path: Path):
    stem = path.stem
    return (0, int(stem)) if stem.isdigit() else (1, stem)


# ---------------------------------------------------------------------------
# KITTI


def _parse_kitti_calib(calib_path: Path, width: int, height: int):
    rows = {}
    for line in calib_path.read_text().splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        vals = rest.split()
        if len(vals) == 12:
            rows[key.strip()] = np.array([float(v) for v in vals]).reshape(3, 4)
    if "P2" not in rows:
        return None, None
    p2 = rows["P2"]
    fx, fy, cx, cy = p2[0, 0], p2[1, 1], p2[0, 2], p2[1, 2]
    left = CameraIntrinsics(fx, fy, cx, cy, width, height)
    right = None
    if "P3" in rows:
        baseline = -(rows["P3"][0, 3] - p2[0, 3]) / fx
        left = CameraIntrinsics(fx, fy, cx, cy, width, height, baseline_m=baseline)
        right = CameraIntrinsics(fx, fy, rows["P3"][0, 2], rows["P3"][1, 2], width, height, baseline_m=baseline)
    return left, right


def _find_depth_cache(seq_dir: Path, stem: str) -> Path | None:
    cache = seq_dir / "depth_2"
    if not cache.is_dir():
        return None
    for ext in (".f32", ".png"):
        candidate = cache / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    return None


def _open_kitti(root: Path, sequence_id: str, load_stereo: bool) -> SequenceManifest:
    seq_dir = root / "sequences" / sequence_id
    left_dir = seq_dir / "image_2"
    if not left_dir.is_dir():
        raise DatasetError(f"missing layout directory: {left_dir}")
    left_images = sorted(left_dir.glob("*.png"), key=_numeric_stem_key)
    if not left_images:
        raise DatasetError(f"empty sequence: no images in {left_dir}")

    right_dir = seq_dir / "image_3"
    if load_stereo and not right_dir.is_dir():
        raise DatasetError(f"stereo requested but second stream absent: {right_dir}")

    times_file = seq_dir / "times.txt"
    rate = _FRAME_RATES["kitti"]
    if times_file.exists():
        stamps = [float(v) for v in times_file.read_text().split()]
        if len(stamps) < len(left_images):
            raise DatasetError(f"times.txt has fewer entries than images in {seq_dir}")
    else:
        stamps = [i / rate for i in range(len(left_images))]

    frames = []
    for i, img in enumerate(left_images):
        images = {"mono": img} if not load_stereo else {"left": img}
        if load_stereo:
            right = right_dir / img.name
            if not right.exists():
                raise DatasetError(f"stereo requested but right image missing: {right}")
            images["right"] = right
        frames.append(FrameRecord(index=i, timestamp=stamps[i], images=images,
                                  depth=_find_depth_cache(seq_dir, img.stem)))

    streams = ("left", "right") if load_stereo else ("mono",)
    calib_file = seq_dir / "calib.txt"
    h, w = load_image(left_images[0]).shape[:2]
    left_calib = right_calib = None
    if calib_file.exists():
        left_calib, right_calib = _parse_kitti_calib(calib_file, w, h)
    if left_calib is None:
        left_calib = _default_intrinsics(left_images[0])
    calibration = {streams[0]: left_calib}
    if load_stereo:
        calibration["right"] = right_calib if right_calib is not None else left_calib

    gt = seq_dir / "groundtruth.txt"
    return SequenceManifest(
        dataset_type="kitti",
        sequence_id=sequence_id,
        frames=frames,
        streams=streams,
        calibration=calibration,
        frame_rate_hz=rate,
        metadata_files=(),
        dataset_root=root,
        sequence_dir=seq_dir,
        depth_scale=256.0,
        ground_truth=gt if gt.exists() else None,
        plot_plane="xz",
    )


# ---------------------------------------------------------------------------
# TUM RGB-D


def _read_tum_index(list_file: Path, image_dir: Path):
    """Pairs (timestamp, path) from rgb.txt/depth.txt, or from filenames."""
    entries = []
    if list_file.exists():
        for line in list_file.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            stamp, _, rel = line.partition(" ")
            entries.append((float(stamp), image_dir.parent / rel.strip()))
    elif image_dir.is_dir():
        for p in sorted(image_dir.glob("*.png")):
            try:
                entries.append((float(p.stem), p))
            except ValueError:
                raise DatasetError(f"cannot parse timestamp from filename: {p}") from None
    entries.sort(key=lambda e: e[0])
    return entries


def _open_tum(root: Path, sequence_id: str, load_stereo: bool) -> SequenceManifest:
    if load_stereo:
        raise DatasetError("stereo requested but second stream absent (tum is monocular RGB-D)")
    seq_dir = root / sequence_id
    rgb_dir = seq_dir / "rgb"
    if not rgb_dir.is_dir():
        raise DatasetError(f"missing layout directory: {rgb_dir}")
    rgb = _read_tum_index(seq_dir / "rgb.txt", rgb_dir)
    if not rgb:
        raise DatasetError(f"empty sequence: no images in {rgb_dir}")
    depth = _read_tum_index(seq_dir / "depth.txt", seq_dir / "depth")
    depth_stamps = np.array([d[0] for d in depth]) if depth else np.empty(0)

    frames = []
    for i, (stamp, img) in enumerate(rgb):
        depth_ref = None
        if len(depth_stamps):
            j = int(np.argmin(np.abs(depth_stamps - stamp)))
            if abs(depth_stamps[j] - stamp) <= TUM_DEPTH_ASSOC_TOLERANCE_S:
                depth_ref = depth[j][1]
        frames.append(FrameRecord(index=i, timestamp=stamp, images={"mono": img}, depth=depth_ref))

    gt = seq_dir / "groundtruth.txt"
    metadata = tuple(p for p in (seq_dir / "rgb.txt",) if p.exists())
    return SequenceManifest(
        dataset_type="tum",
        sequence_id=sequence_id,
        frames=frames,
        streams=("mono",),
        calibration={"mono": _default_intrinsics(rgb[0][1])},
        frame_rate_hz=_FRAME_RATES["tum"],
        metadata_files=metadata,
        dataset_root=root,
        sequence_dir=seq_dir,
        depth_scale=TUM_DEPTH_SCALE,
        ground_truth=gt if gt.exists() else None,
        plot_plane="xy",
    )


# ---------------------------------------------------------------------------
# EuRoC MAV


def _read_euroc_csv(csv_path: Path):
    if not csv_path.exists():
        raise DatasetError(f"missing metadata file: {csv_path}")
    rows = []
    for line in csv_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        ts, _, name = line.partition(",")
        rows.append((int(ts), name.strip()))
    if not rows:
        raise DatasetError(f"empty sequence: no rows in {csv_path}")
    rows.sort(key=lambda r: r[0])
    return rows


def _euroc_intrinsics(cam_dir: Path, fallback_image: Path) -> CameraIntrinsics:
    sensor = cam_dir / "sensor.yaml"
    if sensor.exists():
        try:
            doc = yaml.safe_load(sensor.read_text())
            fu, fv, cu, cv_ = doc["intrinsics"]
            w, h = doc["resolution"]
            return CameraIntrinsics(float(fu), float(fv), float(cu), float(cv_), int(w), int(h))
        except (KeyError, TypeError, ValueError, yaml.YAMLError):
            pass
    return _default_intrinsics(fallback_image)


def _open_euroc(root: Path, sequence_id: str, load_stereo: bool) -> SequenceManifest:
    seq_dir = root / sequence_id
    cam0 = seq_dir / "mav0" / "cam0"
    if not (cam0 / "data").is_dir():
        raise DatasetError(f"missing layout directory: {cam0 / 'data'}")
    rows = _read_euroc_csv(cam0 / "data.csv")
    cam1 = seq_dir / "mav0" / "cam1"
    if load_stereo and not (cam1 / "data").is_dir():
        raise DatasetError(f"stereo requested but second stream absent: {cam1 / 'data'}")

    frames = []
    for i, (ts_ns, name) in enumerate(rows):
        left = cam0 / "data" / name
        images = {"mono": left} if not load_stereo else {"left": left}
        if load_stereo:
            right = cam1 / "data" / name
            if not right.exists():
                raise DatasetError(f"stereo requested but right image missing: {right}")
            images["right"] = right
        frames.append(FrameRecord(index=i, timestamp=ts_ns * 1e-9, images=images))

    streams = ("left", "right") if load_stereo else ("mono",)
    calibration = {streams[0]: _euroc_intrinsics(cam0, frames[0].images[streams[0]])}
    metadata = [cam0 / "data.csv"]
    if load_stereo:
        calibration["right"] = _euroc_intrinsics(cam1, frames[0].images["right"])
        metadata.append(cam1 / "data.csv")

    gt = seq_dir / "groundtruth.txt"
    return SequenceManifest(
        dataset_type="euroc",
        sequence_id=sequence_id,
        frames=frames,
        streams=streams,
        calibration=calibration,
        frame_rate_hz=_FRAME_RATES["euroc"],
        metadata_files=tuple(metadata),
        dataset_root=root,
        sequence_dir=seq_dir,
        ground_truth=gt if gt.exists() else None,
        plot_plane="xy",
    )


# ---------------------------------------------------------------------------
# Frame and depth access


def load_frame(manifest: SequenceManifest, index: int, stream: str | None = None) -> np.ndarray:
    if not 0 <= index < len(manifest.frames):
        raise DatasetError(f"frame index {index} out of range (0..{len(manifest.frames) - 1})")
    stream = stream or manifest.reference_stream
    if stream not in manifest.streams:
        raise DatasetError(f"stream '{stream}' not declared by this sequence")
    return load_image(manifest.frames[index].images[stream])


def load_depth(manifest: SequenceManifest, index: int, stream: str | None = None) -> DepthMap | None:
    """Native depth for a frame, or None when the dataset provides none.

    Right-stream requests reuse the reference-stream depth: perturbation
    strength varies slowly compared with stereo disparity.
    """
    if not 0 <= index < len(manifest.frames):
        raise DatasetError(f"frame index {index} out of range (0..{len(manifest.frames) - 1})")
    ref = manifest.frames[index].depth
    if ref is None:
        return None
    return load_depth_file(ref, manifest.depth_scale)
