import numpy as np
import pytest

from sal.datasets.manifest import DepthMap
from sal.errors import PerturbationError
from sal.perturb.camera import (
    apply_crack,
    apply_soiling,
    forward_displacement_m,
    generate_crack_pattern,
    generate_soiling_overlay,
    motion_endpoints,
)

from conftest import checkerboard_image


# ---------------------------------------------------------------------------
# Soiling


def test_soiling_zero_particles_identity():
    overlay = generate_soiling_overlay(64, 48, 0, seed=1)
    assert np.all(overlay.alpha == 0)
    img = checkerboard_image(64, 48, 8)
    np.testing.assert_array_equal(apply_soiling(img, overlay), img)


def test_soiling_max_blending_of_coincident_particles():
    # Render two particles at the same center by hand through the overlay API:
    # alpha at the exact center equals the opacity, and overlaps keep the max.
    o1 = generate_soiling_overlay(64, 48, 0, seed=1)
    for opacity, color in ((0.5, 0.1), (0.8, 0.9)):
        sigma = 10.0 / 2.0
        ys, xs = np.mgrid[0:48, 0:64]
        a = opacity * np.exp(-((xs - 32.0) ** 2 + (ys - 24.0) ** 2) / (2 * sigma**2))
        wins = a > o1.alpha
        o1.color[wins] = color
        np.maximum(o1.alpha, a.astype(np.float32), out=o1.alpha)
    assert o1.alpha[24, 32] == pytest.approx(0.8, abs=1e-6)


def test_soiling_overlay_deterministic_and_dark():
    a = generate_soiling_overlay(64, 48, 12, seed=7)
    b = generate_soiling_overlay(64, 48, 12, seed=7)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.color, b.color)
    c = generate_soiling_overlay(64, 48, 12, seed=8)
    assert np.abs(a.alpha - c.alpha).max() > 0
    assert a.alpha.max() <= 0.9 + 1e-6
    assert a.color.max() <= 0.15 + 1e-6  # dark bokeh spots


def test_soiling_blend_arithmetic():
    overlay = generate_soiling_overlay(4, 4, 0, seed=0)
    overlay.alpha[:] = 0.5
    overlay.color[:] = 0.0
    img = np.full((4, 4, 3), 0.8, np.float32)
    np.testing.assert_allclose(apply_soiling(img, overlay), 0.4, atol=1e-7)


def test_soiling_full_alpha_black():
    overlay = generate_soiling_overlay(4, 4, 0, seed=0)
    overlay.alpha[:2] = 1.0
    img = np.full((4, 4, 3), 0.7, np.float32)
    out = apply_soiling(img, overlay)
    np.testing.assert_allclose(out[:2], 0.0, atol=1e-7)
    np.testing.assert_allclose(out[2:], 0.7, atol=1e-7)


def test_soiling_dimension_mismatch():
    overlay = generate_soiling_overlay(8, 8, 0, seed=0)
    with pytest.raises(PerturbationError, match="dimensions"):
        apply_soiling(np.zeros((16, 16, 3), np.float32), overlay)


def test_soiling_module_per_stream_patterns(make_module):
    inst = make_module("lens_soiling", {"num_particles": 20}, streams=("left", "right"))
    module = inst.frame_modules[0]
    assert np.abs(module._overlays["left"].alpha - module._overlays["right"].alpha).max() > 0


def test_soiling_constant_across_frames(make_module):
    inst = make_module("lens_soiling", {"num_particles": 15})
    img = checkerboard_image(64, 48, 8)
    out0 = inst.apply_frame(img, None, 0, "mono")
    out5 = inst.apply_frame(img, None, 5, "mono")
    np.testing.assert_array_equal(out0, out5)


# ---------------------------------------------------------------------------
# Cracked lens


def test_crack_below_threshold_empty():
    pattern = generate_crack_pattern(320, 240, impact_force=300, break_threshold=400, seed=1)
    assert pattern.empty
    img = checkerboard_image(320, 240, 16)
    np.testing.assert_array_equal(apply_crack(img, pattern), img)


def test_crack_severe_parameters_nonempty():
    pattern = generate_crack_pattern(320, 240, impact_force=600, break_threshold=250, seed=1)
    assert len(pattern.segments) >= 1
    assert pattern.line_alpha.max() > 0


def test_crack_segment_stress_exceeds_threshold():
    pattern = generate_crack_pattern(320, 240, impact_force=600, break_threshold=250, seed=3)
    r0 = 0.35 * np.hypot(320, 240)
    for i, j in pattern.segments:
        for node in (i, j):
            d = np.linalg.norm(pattern.points[node] - pattern.impact)
            stress = 600 / (1 + (d / r0) ** 2)
            assert stress > 250


def test_crack_deterministic_and_reused():
    a = generate_crack_pattern(160, 120, 500, 300, seed=4)
    b = generate_crack_pattern(160, 120, 500, 300, seed=4)
    assert a.segments == b.segments
    np.testing.assert_array_equal(a.line_alpha, b.line_alpha)
    c = generate_crack_pattern(160, 120, 500, 300, seed=5)
    assert a.segments != c.segments


def test_crack_pixels_outside_blur_mask_unchanged():
    pattern = generate_crack_pattern(160, 120, 600, 250, seed=2)
    img = checkerboard_image(160, 120, 8)
    out = apply_crack(img, pattern)
    outside = ~pattern.blur_mask
    np.testing.assert_array_equal(out[outside], img[outside])


def test_crack_line_pixels_brighter():
    pattern = generate_crack_pattern(160, 120, 600, 250, seed=2)
    img = np.full((120, 160, 3), 0.3, np.float32)
    out = apply_crack(img, pattern)
    lines = pattern.line_alpha > 0.5
    assert lines.any()
    assert np.all(out[lines] > img[lines])


def test_crack_module_reuses_pattern_across_frames(make_module):
    inst = make_module("cracked_lens", {"impact_force": 600, "break_threshold": 250}, width=160, height=120)
    img = checkerboard_image(160, 120, 8)
    np.testing.assert_array_equal(
        inst.apply_frame(img, None, 0, "mono"), inst.apply_frame(img, None, 9, "mono")
    )


def test_crack_invalid_parameters(make_module):
    with pytest.raises(PerturbationError, match="impact_force"):
        make_module("cracked_lens", {"impact_force": -1, "break_threshold": 100})


# ---------------------------------------------------------------------------
# Motion blur


def test_forward_displacement_formula():
    assert forward_displacement_m(120.0, 100.0) == pytest.approx((120.0 / 3.6) * (100.0 / 1000.0), abs=1e-12)
    assert forward_displacement_m(0.0, 50.0) == 0.0
    assert forward_displacement_m(80.0, 0.0) == 0.0


def test_motion_blur_zero_speed_identity(make_module):
    inst = make_module("motion_blur", {"speed_kmh": 0.0, "exposure_ms": 100.0})
    img = checkerboard_image(64, 48, 8)
    out = inst.apply_frame(img, DepthMap.constant(5.0, 48, 64), 0, "mono")
    np.testing.assert_array_equal(out, img)


def test_motion_blur_focus_of_expansion_fixed(make_module):
    inst = make_module("motion_blur", {"speed_kmh": 120.0, "exposure_ms": 100.0})
    img = checkerboard_image(64, 48, 8)
    out = inst.apply_frame(img, DepthMap.constant(6.0, 48, 64), 0, "mono")
    # cx, cy = 32, 24 for the tiny manifest
    assert out[24, 32, 0] == pytest.approx(img[24, 32, 0], abs=1e-6)


def test_motion_blur_displacement_grows_with_radius_and_shrinks_with_depth():
    depth_near = np.full((48, 64), 5.0, np.float32)
    us, vs, eu, ev = motion_endpoints(depth_near, 32.0, 24.0, dz=3.0)
    disp = np.hypot(eu - us, ev - vs)
    assert disp[24, 60] > disp[24, 40]  # farther from the FoE
    depth_far = np.full((48, 64), 25.0, np.float32)
    _, _, eu2, ev2 = motion_endpoints(depth_far, 32.0, 24.0, dz=3.0)
    disp_far = np.hypot(eu2 - us, ev2 - vs)
    assert disp[24, 60] > disp_far[24, 60]  # deeper pixels blur less


def test_motion_blur_blurs_edges(make_module):
    inst = make_module("motion_blur", {"speed_kmh": 120.0, "exposure_ms": 100.0})
    img = checkerboard_image(64, 48, 8)
    out = inst.apply_frame(img, DepthMap.constant(4.0, 48, 64), 0, "mono")
    assert out.min() >= 0.0 and out.max() <= 1.0
    # Away from the FoE the checker edges smear: strictly fewer extreme pixels.
    assert (np.abs(out - img) > 1e-3).any()
    _, gx = np.gradient(out[:, :, 0])
    _, gx0 = np.gradient(img[:, :, 0])
    assert np.abs(gx).sum() < np.abs(gx0).sum()


def test_motion_blur_depth_clamp_near_minimum():
    # d - dz below the floor clamps at 0.1 m rather than inverting.
    depth = np.full((8, 8), 0.5, np.float32)
    _, _, eu, ev = motion_endpoints(depth, 4.0, 4.0, dz=2.0)
    assert np.isfinite(eu).all() and np.isfinite(ev).all()


def test_motion_blur_requires_depth(make_module):
    inst = make_module("motion_blur", {"speed_kmh": 50.0, "exposure_ms": 30.0})
    with pytest.raises(PerturbationError, match="depth"):
        inst.apply_frame(checkerboard_image(64, 48, 8), None, 0, "mono")
