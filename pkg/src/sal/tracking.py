"""Feature tracking diagnostics: detections, matches, track survival.

The built-in tracker is deliberately simple (min-eigenvalue corners plus
NCC patch matching with forward-backward checking); externally produced
tracks can be ingested from JSON so stronger front ends can reuse the
same statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter, uniform_filter

from .errors import SalError
from .datasets.adapters import load_frame
from .datasets.imaging import luma
from .datasets.manifest import SequenceManifest


@dataclass(frozen=True)
class TrackerParams:
    grad_threshold: float = 1e-4
    nms_radius_px: int = 5
    max_features: int = 500
    patch_px: int = 11
    search_radius_px: int = 32
    min_ncc: float = 0.8


@dataclass
class FeatureTrack:
    track_id: int
    frames: list = field(default_factory=list)  # (frame index, x, y)

    @property
    def length(self) -> int:
        return len(self.frames)


def detect_features(image: np.ndarray, params: TrackerParams = TrackerParams()):
    """Min-eigenvalue corner detection with non-maximum suppression.

    Returns (positions (N, 2) int array of x, y; scores (N,)), strongest
    first, capped at max_features.
    """
    gray = luma(image)
    gy, gx = np.gradient(gray)
    # 3x3-window structure tensor, then its smaller eigenvalue.
    sxx = uniform_filter(gx * gx, size=3) * 9.0
    syy = uniform_filter(gy * gy, size=3) * 9.0
    sxy = uniform_filter(gx * gy, size=3) * 9.0
    trace_half = (sxx + syy) / 2.0
    score = trace_half - np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy**2)

    size = 2 * params.nms_radius_px + 1
    is_peak = (score >= maximum_filter(score, size=size)) & (score > params.grad_threshold)
    ys, xs = np.nonzero(is_peak)
    if len(xs) == 0:
        return np.zeros((0, 2), dtype=int), np.zeros(0)
    values = score[ys, xs]
    # Greedy suppression breaks score ties (plateaus) deterministically.
    order = np.lexsort((xs, ys, -values))
    accepted: list[int] = []
    r2 = params.nms_radius_px**2
    for k in order:
        if all((xs[k] - xs[a]) ** 2 + (ys[k] - ys[a]) ** 2 > r2 for a in accepted):
            accepted.append(k)
            if len(accepted) >= params.max_features:
                break
    idx = np.asarray(accepted)
    positions = np.stack([xs[idx], ys[idx]], axis=1)
    return positions, values[idx]


def _extract_patches(gray: np.ndarray, positions: np.ndarray, patch: int):
    """Zero-mean patches; border keypoints are dropped (mask returned)."""
    h, w = gray.shape
    half = patch // 2
    ok = (
        (positions[:, 0] >= half)
        & (positions[:, 0] < w - half)
        & (positions[:, 1] >= half)
        & (positions[:, 1] < h - half)
    )
    patches = np.zeros((len(positions), patch * patch), dtype=np.float32)
    for i in np.flatnonzero(ok):
        x, y = positions[i]
        patches[i] = gray[y - half : y + half + 1, x - half : x + half + 1].ravel()
    means = patches.mean(axis=1, keepdims=True)
    patches -= means
    norms = np.linalg.norm(patches, axis=1)
    ok &= norms > 1e-9  # flat patches carry no signal
    return patches, norms, ok


def _best_ncc(i, positions_a, patches_a, norms_a, positions_b, patches_b, norms_b, ok_b, radius):
    dx = positions_b[:, 0] - positions_a[i, 0]
    dy = positions_b[:, 1] - positions_a[i, 1]
    dist2 = dx * dx + dy * dy
    near = ok_b & (dist2 <= radius * radius)
    candidates = np.flatnonzero(near)
    if len(candidates) == 0:
        return -1, -1.0
    scores = patches_b[candidates] @ patches_a[i] / (norms_b[candidates] * norms_a[i])
    # Repetitive texture produces NCC ties (equal up to float32 rounding);
    # prefer the smallest motion among them.
    tied = scores >= scores.max() - 1e-5
    best = int(candidates[tied][np.argmin(dist2[candidates][tied])])
    return best, float(scores.max())


def match_features(
    prev_gray: np.ndarray,
    prev_positions: np.ndarray,
    cur_gray: np.ndarray,
    cur_positions: np.ndarray,
    params: TrackerParams = TrackerParams(),
):
    """NCC matches within a search radius, forward-backward consistent."""
    if len(prev_positions) == 0 or len(cur_positions) == 0:
        return []
    p_patches, p_norms, p_ok = _extract_patches(prev_gray, prev_positions, params.patch_px)
    c_patches, c_norms, c_ok = _extract_patches(cur_gray, cur_positions, params.patch_px)
    matches = []
    for i in np.flatnonzero(p_ok):
        j, ncc = _best_ncc(
            i, prev_positions, p_patches, p_norms, cur_positions, c_patches, c_norms, c_ok,
            params.search_radius_px,
        )
        if j < 0 or ncc < params.min_ncc:
            continue
        back, _ = _best_ncc(
            j, cur_positions, c_patches, c_norms, prev_positions, p_patches, p_norms, p_ok,
            params.search_radius_px,
        )
        if back < 0:
            continue
        shift = prev_positions[back] - prev_positions[i]
        if float(np.hypot(shift[0], shift[1])) <= 1.0:
            matches.append((int(i), int(j)))
    return matches


# ---------------------------------------------------------------------------
# Track statistics


def _summary(values) -> dict:
    if not values:
        return {"mean": 0.0, "median": 0.0, "min": 0, "max": 0}
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def survival_curve(lengths) -> list:
    """[(t, fraction of tracks with length >= t)] for t = 1..max length."""
    if not lengths:
        return []
    arr = np.asarray(lengths)
    return [(t, float(np.mean(arr >= t))) for t in range(1, int(arr.max()) + 1)]


@dataclass
class TrackingStats:
    mean_track_length: float
    num_tracks: int
    detections: dict
    matches: dict
    survival: list
    matching_failure: bool

    def to_dict(self) -> dict:
        return {
            "mean_track_length": self.mean_track_length,
            "num_tracks": self.num_tracks,
            "detections": self.detections,
            "matches": self.matches,
            "survival": [[t, frac] for t, frac in self.survival],
            "matching_failure": self.matching_failure,
        }


def stats_from_tracks(tracks, per_frame_detections, per_frame_matches) -> TrackingStats:
    lengths = [t.length for t in tracks]
    total_matches = int(np.sum(per_frame_matches)) if per_frame_matches else 0
    return TrackingStats(
        mean_track_length=float(np.mean(lengths)) if lengths else 0.0,
        num_tracks=len(lengths),
        detections=_summary(per_frame_detections),
        matches=_summary(per_frame_matches),
        survival=survival_curve(lengths),
        matching_failure=total_matches == 0,
    )


def run_tracking(
    manifest: SequenceManifest,
    params: TrackerParams = TrackerParams(),
    stream: str | None = None,
) -> TrackingStats:
    """Chain frame-to-frame matches into tracks over a sequence.

    A track extends while its feature keeps matching; a miss terminates it
    (no re-identification). Unmatched detections start new tracks.
    """
    if len(manifest.frames) < 2:
        raise SalError("tracking needs at least 2 frames")
    stream = stream or manifest.reference_stream

    tracks: list[FeatureTrack] = []
    per_frame_detections: list[int] = []
    per_frame_matches: list[int] = []

    prev_gray = None
    prev_positions = None
    active: dict[int, FeatureTrack] = {}  # prev keypoint index -> open track

    for frame in manifest.frames:
        gray = luma(load_frame(manifest, frame.index, stream))
        positions, _ = detect_features(gray, params)
        per_frame_detections.append(len(positions))

        if prev_gray is None:
            for k, (x, y) in enumerate(positions):
                track = FeatureTrack(len(tracks), [(frame.index, int(x), int(y))])
                tracks.append(track)
                active[k] = track
        else:
            matches = match_features(prev_gray, prev_positions, gray, positions, params)
            per_frame_matches.append(len(matches))
            next_active: dict[int, FeatureTrack] = {}
            matched_cur = set()
            for i, j in matches:
                track = active.get(i)
                if track is None:
                    track = FeatureTrack(len(tracks), [(frame.index - 1, int(prev_positions[i][0]), int(prev_positions[i][1]))])
                    tracks.append(track)
                x, y = positions[j]
                track.frames.append((frame.index, int(x), int(y)))
                next_active[j] = track
                matched_cur.add(j)
            for k, (x, y) in enumerate(positions):
                if k not in matched_cur:
                    track = FeatureTrack(len(tracks), [(frame.index, int(x), int(y))])
                    tracks.append(track)
                    next_active[k] = track
            active = next_active
        prev_gray = gray
        prev_positions = positions

    return stats_from_tracks(tracks, per_frame_detections, per_frame_matches)


def load_external_tracks(path: str | Path) -> list[FeatureTrack]:
    """Tracks JSON: array of {id, frames: [{index, x, y}]}."""
    try:
        entries = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SalError(f"cannot read tracks file {path}: {exc}") from exc
    tracks = []
    for e in entries:
        frames = [(int(f["index"]), float(f["x"]), float(f["y"])) for f in e["frames"]]
        tracks.append(FeatureTrack(int(e["id"]), frames))
    return tracks


def stats_from_external_tracks(tracks: list[FeatureTrack]) -> TrackingStats:
    per_frame: dict[int, int] = {}
    for track in tracks:
        for idx, _, _ in track.frames:
            per_frame[idx] = per_frame.get(idx, 0) + 1
    detections = [per_frame[k] for k in sorted(per_frame)]
    matches = [max(t.length - 1, 0) for t in tracks]
    return stats_from_tracks(tracks, detections, [int(np.sum(matches))] if tracks else [])


def compare_tracking(clean: TrackingStats, levels) -> dict:
    """Percent change in mean track length at the most severe usable level.

    levels: ordered (name, TrackingStats) pairs, mildest first. Levels with
    zero matches are flagged as matching failures and skipped for the
    headline delta.
    """
    if clean.mean_track_length <= 0:
        raise SalError("clean tracking has zero mean track length; cannot compare")
    per_level = {}
    delta = None
    delta_level = None
    for name, stats in levels:
        entry = {
            "mean_track_length": stats.mean_track_length,
            "matching_failure": stats.matching_failure,
            "delta_percent": None,
        }
        if not stats.matching_failure:
            entry["delta_percent"] = 100.0 * (stats.mean_track_length - clean.mean_track_length) / clean.mean_track_length
        per_level[name] = entry
    for name, stats in reversed(list(levels)):
        if not stats.matching_failure:
            delta = per_level[name]["delta_percent"]
            delta_level = name
            break
    return {
        "clean_mean_track_length": clean.mean_track_length,
        "levels": per_level,
        "delta_percent": delta,
        "delta_level": delta_level,
    }
