import json

import cv2
import numpy as np
import pytest

from sal.datasets.imaging import luma, save_image
from sal.datasets.synthetic import SyntheticSpec, generate_synthetic_sequence
from sal.errors import SalError
from sal.tracking import (
    FeatureTrack,
    TrackerParams,
    compare_tracking,
    detect_features,
    load_external_tracks,
    match_features,
    run_tracking,
    stats_from_external_tracks,
    stats_from_tracks,
    survival_curve,
)

from conftest import checkerboard_image


def textured_image(seed, size=(128, 128)):
    rng = np.random.default_rng(seed)
    base = cv2.GaussianBlur(rng.random(size).astype(np.float32), (0, 0), 1.5)
    return np.repeat(base[:, :, None], 3, axis=2)


# ---------------------------------------------------------------------------
# Detection


def test_uniform_image_zero_features():
    img = np.full((64, 64, 3), 0.5, np.float32)
    positions, _ = detect_features(img)
    assert len(positions) == 0


def test_checkerboard_interior_corner_count():
    # 8x8 board on 256^2: 49 interior corners; greedy NMS keeps one per corner.
    img = checkerboard_image(256, 256, 32)
    positions, scores = detect_features(img)
    assert len(positions) == 49
    assert len(positions) >= 40
    # every detection sits on a 32-multiple lattice point (within a pixel)
    mods = np.abs(((positions + 16) % 32) - 16)
    assert mods.max() <= 1


def test_detection_deterministic():
    img = textured_image(3)
    p1, s1 = detect_features(img)
    p2, s2 = detect_features(img)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(s1, s2)


def test_max_features_cap():
    img = textured_image(4)
    limited = detect_features(img, TrackerParams(max_features=10))[0]
    assert len(limited) == 10


# ---------------------------------------------------------------------------
# Matching


def test_identical_frames_match_themselves():
    img = textured_image(5)
    gray = luma(img)
    positions, _ = detect_features(img)
    matches = match_features(gray, positions, gray, positions)
    interior = [
        i for i, (x, y) in enumerate(positions)
        if 5 <= x < 123 and 5 <= y < 123
    ]
    matched_prev = {i for i, _ in matches}
    assert set(interior) <= matched_prev
    assert all(i == j for i, j in matches)


def test_shifted_frame_matches_displaced():
    img1 = textured_image(6)
    img2 = np.roll(img1, 5, axis=1)
    p1, _ = detect_features(img1)
    p2, _ = detect_features(img2)
    matches = match_features(luma(img1), p1, luma(img2), p2)
    assert len(matches) > 20
    for i, j in matches:
        dx = p2[j][0] - p1[i][0]
        dy = p2[j][1] - p1[i][1]
        assert abs(dx - 5) <= 1 and abs(dy) <= 1


def test_uncorrelated_noise_rarely_matches():
    img1 = np.repeat(np.random.default_rng(1).random((128, 128)).astype(np.float32)[:, :, None], 3, 2)
    img2 = np.repeat(np.random.default_rng(2).random((128, 128)).astype(np.float32)[:, :, None], 3, 2)
    p1, _ = detect_features(img1)
    p2, _ = detect_features(img2)
    matches = match_features(luma(img1), p1, luma(img2), p2)
    assert len(matches) < 0.05 * max(len(p1), 1)


# ---------------------------------------------------------------------------
# Track statistics


def test_survival_curve_definition():
    assert survival_curve([1, 2, 3]) == [(1, 1.0), (2, pytest.approx(2 / 3)), (3, pytest.approx(1 / 3))]


def test_survival_monotone_and_starts_at_one():
    curve = survival_curve([1, 1, 4, 7, 2])
    assert curve[0] == (1, 1.0)
    fractions = [f for _, f in curve]
    assert all(a >= b for a, b in zip(fractions, fractions[1:]))


def test_mean_track_length_exact():
    tracks = [FeatureTrack(0, [(0, 0, 0)]), FeatureTrack(1, [(0, 0, 0), (1, 0, 0), (2, 0, 0)])]
    stats = stats_from_tracks(tracks, [2, 1, 1], [1, 1])
    assert stats.mean_track_length == 2.0
    assert stats.num_tracks == 2


def test_run_tracking_static_sequence(tmp_path):
    spec = SyntheticSpec(n_frames=10, width=160, height=120, checker_px=16)
    manifest, _ = generate_synthetic_sequence(spec, tmp_path)
    stats = run_tracking(manifest)
    assert stats.mean_track_length >= 9.0
    assert not stats.matching_failure
    assert stats.survival[0] == (1, 1.0)
    assert stats.detections["mean"] > 10


def test_run_tracking_black_sequence(tmp_path):
    seq = tmp_path / "sequences" / "00"
    for i in range(4):
        save_image(seq / "image_2" / f"{i:06d}.png", np.zeros((48, 64, 3), np.float32))
    from sal.datasets.adapters import open_sequence

    manifest = open_sequence("kitti", tmp_path, "00")
    stats = run_tracking(manifest)
    assert stats.num_tracks == 0
    assert stats.detections["mean"] == 0.0
    assert stats.matching_failure
    assert stats.mean_track_length == 0.0


def test_run_tracking_deterministic(tmp_path):
    spec = SyntheticSpec(n_frames=4, width=96, height=72, texture="noise", seed=5)
    manifest, _ = generate_synthetic_sequence(spec, tmp_path)
    a = run_tracking(manifest)
    b = run_tracking(manifest)
    assert a.to_dict() == b.to_dict()


# ---------------------------------------------------------------------------
# External tracks and comparison


def test_external_tracks_ingestion(tmp_path):
    tracks = [
        {"id": 0, "frames": [{"index": 0, "x": 1, "y": 2}, {"index": 1, "x": 1.5, "y": 2}]},
        {"id": 1, "frames": [{"index": 0, "x": 9, "y": 9}]},
    ]
    path = tmp_path / "tracks.json"
    path.write_text(json.dumps(tracks))
    loaded = load_external_tracks(path)
    stats = stats_from_external_tracks(loaded)
    assert stats.num_tracks == 2
    assert stats.mean_track_length == pytest.approx(1.5)


def test_compare_tracking_severe_failure_falls_back_to_heavy():
    clean = stats_from_tracks([FeatureTrack(0, [(0, 0, 0)] * 824)], [1], [823])
    clean.mean_track_length = 8.24  # hand-pinned statistics
    heavy = stats_from_tracks([FeatureTrack(0, [(0, 0, 0)] * 807)], [1], [806])
    heavy.mean_track_length = 8.07
    severe = stats_from_tracks([], [0], [0])
    report = compare_tracking(clean, [("heavy", heavy), ("severe", severe)])
    assert report["delta_level"] == "heavy"
    assert round(report["delta_percent"]) == -2
    assert report["levels"]["severe"]["matching_failure"]


def test_compare_tracking_plus_ten_percent():
    clean = stats_from_tracks([FeatureTrack(0, [(0, 0, 0)])], [1], [1])
    clean.mean_track_length = 53.35
    severe = stats_from_tracks([FeatureTrack(0, [(0, 0, 0)])], [1], [1])
    severe.mean_track_length = 58.78
    report = compare_tracking(clean, [("severe", severe)])
    assert round(report["delta_percent"]) == 10


def test_compare_tracking_equal_stats_zero_delta():
    clean = stats_from_tracks([FeatureTrack(0, [(0, 0, 0), (1, 0, 0)])], [1, 1], [1])
    report = compare_tracking(clean, [("light", clean)])
    assert report["delta_percent"] == 0.0


def test_compare_tracking_needs_positive_clean():
    empty = stats_from_tracks([], [0], [0])
    with pytest.raises(SalError):
        compare_tracking(empty, [])
