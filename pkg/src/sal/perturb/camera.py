"""Camera-attached effects: lens soiling, cracked lens, forward motion blur."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist

from ..errors import PerturbationError
from ..seeding import rng_from_seed
from .base import (
    BoundaryParamSpec,
    PerturbationModule,
    opt_number,
    register_module,
    req_int,
    req_number,
)
from .weather import draw_segment


# ---------------------------------------------------------------------------
# Lens soiling


@dataclass
class SoilingOverlay:
    """Rendered occlusion planes, constant for all frames of a sequence."""

    alpha: np.ndarray  # (H, W) in [0, 1]
    color: np.ndarray  # (H, W, 3)
    particles: list = field(default_factory=list)  # (cx, cy, radius, opacity, rgb)


def generate_soiling_overlay(
    width: int,
    height: int,
    num_particles: int,
    seed: int,
    size_range=(8.0, 36.0),
    opacity_range=(0.35, 0.9),
    color_range=(0.02, 0.15),
) -> SoilingOverlay:
    """Dark bokeh spots with Gaussian falloff; overlaps use max blending."""
    if num_particles < 0:
        raise PerturbationError("num_particles must be >= 0")
    rng = rng_from_seed(seed)
    alpha = np.zeros((height, width), dtype=np.float32)
    color = np.zeros((height, width, 3), dtype=np.float32)
    particles = []
    for _ in range(num_particles):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        radius = rng.uniform(*size_range)
        opacity = rng.uniform(*opacity_range)
        rgb = rng.uniform(color_range[0], color_range[1], size=3).astype(np.float32)
        particles.append((cx, cy, radius, opacity, rgb))

        sigma = radius / 2.0
        reach = int(math.ceil(3.0 * sigma))
        x0, x1 = max(int(cx) - reach, 0), min(int(cx) + reach, width - 1)
        y0, y1 = max(int(cy) - reach, 0), min(int(cy) + reach, height - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        r2 = (xs - cx) ** 2 + (ys - cy) ** 2
        a = (opacity * np.exp(-r2 / (2.0 * sigma * sigma))).astype(np.float32)
        region = alpha[y0 : y1 + 1, x0 : x1 + 1]
        wins = a > region
        color[y0 : y1 + 1, x0 : x1 + 1][wins] = rgb
        np.maximum(region, a, out=region)
    return SoilingOverlay(alpha=alpha, color=color, particles=particles)


def apply_soiling(image: np.ndarray, overlay: SoilingOverlay) -> np.ndarray:
    if overlay.alpha.shape != image.shape[:2]:
        raise PerturbationError("soiling overlay dimensions do not match image")
    a = overlay.alpha[:, :, None]
    return np.clip(image * (1.0 - a) + overlay.color * a, 0.0, 1.0)


@register_module
class LensSoilingModule(PerturbationModule):
    module_name = "lens_soiling"
    PARAM_KEYS = frozenset(
        {"num_particles", "size_min_px", "size_max_px", "opacity_min", "opacity_max"}
    )

    def __init__(self, params):
        super().__init__(params)
        self.num_particles = req_int(params, "num_particles", ge=0)
        self.size_range = (
            opt_number(params, "size_min_px", 8.0, gt=0),
            opt_number(params, "size_max_px", 36.0, gt=0),
        )
        self.opacity_range = (
            opt_number(params, "opacity_min", 0.35, ge=0, le=1),
            opt_number(params, "opacity_max", 0.9, ge=0, le=1),
        )
        self._overlays: dict = {}

    def setup(self, ctx):
        super().setup(ctx)
        self._overlays = {}
        for stream in ctx.manifest.streams:
            calib = ctx.manifest.calibration[stream]
            # Separate physical lenses get separate contamination patterns.
            self._overlays[stream] = generate_soiling_overlay(
                calib.width,
                calib.height,
                self.num_particles,
                self.setup_seed(stream),
                self.size_range,
                self.opacity_range,
            )

    def apply(self, image, depth, frame_index, stream):
        return apply_soiling(image, self._overlays[stream])


# ---------------------------------------------------------------------------
# Cracked lens


@dataclass
class CrackPattern:
    points: np.ndarray  # (N, 2) sampled nodes, impact point last
    impact: np.ndarray  # (2,)
    impact_force: float
    break_threshold: float
    segments: list  # (i, j) node index pairs
    line_alpha: np.ndarray  # (H, W) anti-aliased line coverage
    blur_mask: np.ndarray  # (H, W) bool, pixels within reach of a crack

    @property
    def empty(self) -> bool:
        return not self.segments


STRESS_RADIUS_FRACTION = 0.35  # of the image diagonal
CRACK_LINE_ALPHA = 0.8
CRACK_BLUR_SIGMA = 2.0
CRACK_BLUR_REACH_PX = 6


def generate_crack_pattern(
    width: int,
    height: int,
    impact_force: float,
    break_threshold: float,
    seed: int,
    n_points: int = 120,
) -> CrackPattern:
    """Fracture on a random point graph.

    Stress decays from the impact point as F / (1 + (r/r0)^2). Points above
    the break threshold connect to their 3 nearest stressed neighbors
    (primary cracks); secondary cracks are the Euclidean minimum spanning
    tree over all stressed points.
    """
    if impact_force <= 0 or break_threshold <= 0:
        raise PerturbationError("impact_force and break_threshold must be > 0")
    rng = rng_from_seed(seed)
    pts = rng.uniform([0, 0], [width, height], size=(n_points, 2))
    impact = rng.uniform([0, 0], [width, height], size=2)
    nodes = np.vstack([pts, impact[None, :]])

    r0 = STRESS_RADIUS_FRACTION * math.hypot(width, height)
    dist_to_impact = np.linalg.norm(nodes - impact[None, :], axis=1)
    stress = impact_force / (1.0 + (dist_to_impact / r0) ** 2)
    stressed_idx = np.flatnonzero(stress > break_threshold)

    segments: set = set()
    if len(stressed_idx) >= 2:
        pos = nodes[stressed_idx]
        pair_d = cdist(pos, pos)
        np.fill_diagonal(pair_d, np.inf)
        k = min(3, len(stressed_idx) - 1)
        for local_i, node_i in enumerate(stressed_idx):
            for local_j in np.argsort(pair_d[local_i])[:k]:
                node_j = stressed_idx[local_j]
                if (stress[node_i] + stress[node_j]) / 2.0 > break_threshold:
                    segments.add((min(node_i, node_j), max(node_i, node_j)))
        mst = minimum_spanning_tree(csr_matrix(np.where(np.isinf(pair_d), 0, pair_d)))
        for local_i, local_j in zip(*mst.nonzero()):
            a, b = stressed_idx[local_i], stressed_idx[local_j]
            segments.add((min(a, b), max(a, b)))

    line_alpha = np.zeros((height, width), dtype=np.float32)
    for i, j in sorted(segments):
        draw_segment(line_alpha, nodes[i, 0], nodes[i, 1], nodes[j, 0], nodes[j, 1], 1.5, 1.0)
    reach = 2 * CRACK_BLUR_REACH_PX + 1
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (reach, reach))
    blur_mask = cv2.dilate((line_alpha > 0.05).astype(np.uint8), kernel).astype(bool)
    return CrackPattern(
        points=nodes,
        impact=impact,
        impact_force=float(impact_force),
        break_threshold=float(break_threshold),
        segments=sorted(segments),
        line_alpha=line_alpha,
        blur_mask=blur_mask,
    )


def apply_crack(image: np.ndarray, pattern: CrackPattern) -> np.ndarray:
    if pattern.line_alpha.shape != image.shape[:2]:
        raise PerturbationError("crack pattern dimensions do not match image")
    if pattern.empty:
        return image.copy()
    a = (CRACK_LINE_ALPHA * pattern.line_alpha)[:, :, None]
    out = image * (1.0 - a) + a  # blend toward white along the lines
    blurred = cv2.GaussianBlur(out, (0, 0), CRACK_BLUR_SIGMA)
    out[pattern.blur_mask] = blurred[pattern.blur_mask]
    return np.clip(out, 0.0, 1.0)


@register_module
class CrackedLensModule(PerturbationModule):
    module_name = "cracked_lens"
    PARAM_KEYS = frozenset({"impact_force", "break_threshold", "n_points"})

    def __init__(self, params):
        super().__init__(params)
        self.impact_force = req_number(params, "impact_force", gt=0)
        self.break_threshold = req_number(params, "break_threshold", gt=0)
        self.n_points = int(opt_number(params, "n_points", 120, ge=2))
        self._patterns: dict = {}

    def setup(self, ctx):
        super().setup(ctx)
        self._patterns = {}
        for stream in ctx.manifest.streams:
            calib = ctx.manifest.calibration[stream]
            # The crack texture is generated once and reused on every frame.
            self._patterns[stream] = generate_crack_pattern(
                calib.width,
                calib.height,
                self.impact_force,
                self.break_threshold,
                self.setup_seed(stream),
                self.n_points,
            )

    def apply(self, image, depth, frame_index, stream):
        return apply_crack(image, self._patterns[stream])


# ---------------------------------------------------------------------------
# Forward motion blur


MIN_BLURRED_DEPTH_M = 0.1


def forward_displacement_m(speed_kmh: float, exposure_ms: float) -> float:
    """Camera travel during the exposure: (s / 3.6) * (e / 1000), meters."""
    return (speed_kmh / 3.6) * (exposure_ms / 1000.0)


def motion_endpoints(depth_m: np.ndarray, cx: float, cy: float, dz: float):
    """Per-pixel reprojected endpoints after a forward translation dz.

    A pixel at depth d maps to d' = max(d - dz, 0.1); its image position
    scales radially about the focus of expansion (cx, cy) by d / d'.
    """
    h, w = depth_m.shape
    us, vs = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    d_after = np.maximum(depth_m - dz, MIN_BLURRED_DEPTH_M)
    ratio = depth_m / d_after
    end_u = cx + (us - cx) * ratio
    end_v = cy + (vs - cy) * ratio
    return us, vs, end_u.astype(np.float32), end_v.astype(np.float32)


def apply_forward_motion_blur(
    image: np.ndarray,
    depth_m: np.ndarray,
    cx: float,
    cy: float,
    dz: float,
    max_taps: int = 32,
) -> np.ndarray:
    """Average bilinear samples along each pixel's blur segment."""
    if dz == 0.0:
        return image.copy()
    us, vs, end_u, end_v = motion_endpoints(depth_m, cx, cy, dz)
    disp = np.hypot(end_u - us, end_v - vs)
    n_taps = np.clip(np.ceil(disp), 1, max_taps).astype(np.int32)

    acc = np.zeros_like(image)
    step_u = np.where(n_taps > 1, (end_u - us) / np.maximum(n_taps - 1, 1), 0.0).astype(np.float32)
    step_v = np.where(n_taps > 1, (end_v - vs) / np.maximum(n_taps - 1, 1), 0.0).astype(np.float32)
    for tap in range(int(n_taps.max())):
        mask = (n_taps > tap).astype(np.float32)[:, :, None]
        map_u = us + tap * step_u
        map_v = vs + tap * step_v
        sampled = cv2.remap(image, map_u, map_v, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
        acc += sampled * mask
    return np.clip(acc / n_taps[:, :, None], 0.0, 1.0).astype(np.float32)


@register_module
class MotionBlurModule(PerturbationModule):
    module_name = "motion_blur"
    requires_depth = True
    SEARCHABLE_PARAMS = {
        "speed_kmh": BoundaryParamSpec(domain="real"),
        "exposure_ms": BoundaryParamSpec(domain="real"),
    }
    PARAM_KEYS = frozenset({"speed_kmh", "exposure_ms", "max_taps", "fallback_depth_m"})

    def __init__(self, params):
        super().__init__(params)
        self.speed_kmh = req_number(params, "speed_kmh", ge=0)
        self.exposure_ms = req_number(params, "exposure_ms", ge=0)
        self.max_taps = int(opt_number(params, "max_taps", 32, ge=1))
        opt_number(params, "fallback_depth_m", None, gt=0)

    @property
    def dz(self) -> float:
        return forward_displacement_m(self.speed_kmh, self.exposure_ms)

    def apply(self, image, depth, frame_index, stream):
        if self.dz == 0.0:
            return image.copy()
        d = self.resolve_depth(depth, image.shape)
        calib = self.ctx.manifest.calibration[stream]
        return apply_forward_motion_blur(image, d, calib.cx, calib.cy, self.dz, self.max_taps)
