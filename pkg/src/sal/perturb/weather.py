"""Weather and illumination effects: fog, rain, day-to-night.

Fog follows the classic atmospheric scattering law
    out(x) = J(x) * t(x) + A * (1 - t(x)),   t(x) = exp(-beta * d(x))
with the extinction coefficient tied to meteorological visibility V by
beta = 3.912 / V (the 2% contrast threshold), so severity is stated in
meters of visibility.
"""

from __future__ import annotations

import math

import cv2
import numpy as np

from ..errors import PerturbationError
from ..seeding import rng_from_seed
from ..datasets.imaging import luma
from .base import (
    BoundaryParamSpec,
    PerturbationModule,
    opt_number,
    register_module,
    req_number,
)

KOSCHMIEDER_CONTRAST_LN = 3.912  # -ln(0.02)


def beta_from_visibility(visibility_m: float) -> float:
    """Extinction coefficient (1/m) for a meteorological visibility (m)."""
    if visibility_m <= 0:
        raise PerturbationError("visibility_m must be > 0")
    return KOSCHMIEDER_CONTRAST_LN / visibility_m


def koschmieder_blend(image: np.ndarray, transmission: np.ndarray, airlight: float) -> np.ndarray:
    t = transmission[:, :, None]
    return np.clip(image * t + airlight * (1.0 - t), 0.0, 1.0)


def value_noise(height: int, width: int, scale_px: float, seed: int) -> np.ndarray:
    """Smooth value noise in [-1, 1]: bilinear-interpolated seeded lattice."""
    rng = rng_from_seed(seed)
    cells_y = max(2, int(math.ceil(height / scale_px)) + 1)
    cells_x = max(2, int(math.ceil(width / scale_px)) + 1)
    lattice = rng.uniform(-1.0, 1.0, size=(cells_y, cells_x)).astype(np.float32)
    return cv2.resize(lattice, (width, height), interpolation=cv2.INTER_LINEAR)


@register_module
class FogModule(PerturbationModule):
    module_name = "fog"
    requires_depth = True
    SEARCHABLE_PARAMS = {"visibility_m": BoundaryParamSpec(domain="integer")}
    PARAM_KEYS = frozenset(
        {
            "visibility_m",
            "atmospheric_light",
            "heterogeneous",
            "heterogeneity_amplitude",
            "noise_scale_px",
            "fallback_depth_m",
        }
    )

    def __init__(self, params):
        super().__init__(params)
        self.visibility_m = req_number(params, "visibility_m", gt=0)
        self.atmospheric_light = opt_number(params, "atmospheric_light", 0.9, ge=0, le=1)
        self.heterogeneous = bool(params.get("heterogeneous", False))
        self.amplitude = opt_number(params, "heterogeneity_amplitude", 0.3, ge=0, lt=1)
        self.noise_scale_px = opt_number(params, "noise_scale_px", 64.0, gt=0)
        opt_number(params, "fallback_depth_m", None, gt=0)
        self.beta = beta_from_visibility(self.visibility_m)
        self._field = None

    def setup(self, ctx):
        super().setup(ctx)
        if self.heterogeneous:
            calib = ctx.manifest.calibration[ctx.manifest.reference_stream]
            # One atmospheric density field for the whole sequence, shared
            # by both camera streams.
            noise = value_noise(calib.height, calib.width, self.noise_scale_px, self.setup_seed(0))
            self._field = 1.0 + self.amplitude * noise

    def apply(self, image, depth, frame_index, stream):
        d = self.resolve_depth(depth, image.shape)
        beta = self.beta * self._field if self._field is not None else self.beta
        t = np.exp(-beta * d).astype(np.float32)
        return koschmieder_blend(image, t, self.atmospheric_light)


# ---------------------------------------------------------------------------
# Rain


def draw_segment(layer: np.ndarray, x0: float, y0: float, x1: float, y1: float, width: float, intensity: float) -> None:
    """Max-composite an anti-aliased segment into an alpha layer."""
    h, w = layer.shape
    pad = width / 2.0 + 1.0
    xmin = max(int(math.floor(min(x0, x1) - pad)), 0)
    xmax = min(int(math.ceil(max(x0, x1) + pad)), w - 1)
    ymin = max(int(math.floor(min(y0, y1) - pad)), 0)
    ymax = min(int(math.ceil(max(y0, y1) + pad)), h - 1)
    if xmin > xmax or ymin > ymax:
        return
    ys, xs = np.mgrid[ymin : ymax + 1, xmin : xmax + 1]
    dx, dy = x1 - x0, y1 - y0
    seg_len2 = dx * dx + dy * dy
    if seg_len2 < 1e-12:
        dist = np.hypot(xs - x0, ys - y0)
    else:
        u = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg_len2, 0.0, 1.0)
        dist = np.hypot(xs - (x0 + u * dx), ys - (y0 + u * dy))
    alpha = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0) * intensity
    region = layer[ymin : ymax + 1, xmin : xmax + 1]
    np.maximum(region, alpha.astype(np.float32), out=region)


def estimate_airlight(image: np.ndarray, fraction: float = 0.01) -> float:
    """Mean of the brightest pixels (by luma), default top 1%."""
    gray = luma(image).ravel()
    k = max(1, int(round(fraction * gray.size)))
    brightest = np.partition(gray, gray.size - k)[gray.size - k :]
    return float(brightest.mean())


@register_module
class RainModule(PerturbationModule):
    """Rainfall parameterized in mm/h.

    Two stages: haze-like attenuation from distant sub-pixel droplets
    (power-law extinction beta = a * R^b), then near-field streaks placed
    from a per-frame seed so the streak layout is dynamic across frames.
    The attenuation coefficients and streak density are declared tunables,
    not physical claims.
    """

    module_name = "rain"
    requires_depth = True
    SEARCHABLE_PARAMS = {"intensity": BoundaryParamSpec(domain="integer")}
    PARAM_KEYS = frozenset(
        {
            "intensity",
            "attenuation_a",
            "attenuation_b",
            "streak_density",
            "streak_length_px",
            "streak_width_px",
            "fall_angle_jitter_deg",
            "streak_brightness",
            "fallback_depth_m",
        }
    )

    def __init__(self, params):
        super().__init__(params)
        self.intensity = req_number(params, "intensity", gt=0)
        self.attenuation_a = opt_number(params, "attenuation_a", 1e-4, ge=0)
        self.attenuation_b = opt_number(params, "attenuation_b", 0.7, gt=0)
        self.streak_density = opt_number(params, "streak_density", 3.0, ge=0)
        self.streak_length_px = opt_number(params, "streak_length_px", 18.0, gt=0)
        self.streak_width_px = opt_number(params, "streak_width_px", 1.6, gt=0)
        self.jitter_deg = opt_number(params, "fall_angle_jitter_deg", 8.0, ge=0)
        self.streak_brightness = opt_number(params, "streak_brightness", 0.25, ge=0, le=1)
        opt_number(params, "fallback_depth_m", None, gt=0)
        self.beta_rain = self.attenuation_a * self.intensity**self.attenuation_b

    def streak_count(self, height: int, width: int) -> int:
        megapixels = height * width / 1e6
        return int(round(self.streak_density * self.intensity * megapixels))

    def apply(self, image, depth, frame_index, stream):
        d = self.resolve_depth(depth, image.shape)
        airlight = estimate_airlight(image)
        t = np.exp(-self.beta_rain * d).astype(np.float32)
        out = koschmieder_blend(image, t, airlight)

        h, w = out.shape[:2]
        n = self.streak_count(h, w)
        if n == 0:
            return out
        rng = rng_from_seed(self.frame_seed(frame_index, stream))
        cx = rng.uniform(0, w, size=n)
        cy = rng.uniform(0, h, size=n)
        angles = np.deg2rad(90.0 + rng.uniform(-self.jitter_deg, self.jitter_deg, size=n))
        layer = np.zeros((h, w), dtype=np.float32)
        for i in range(n):
            # Streaks assigned larger scene depth render shorter.
            d_streak = float(d[int(cy[i]) % h, int(cx[i]) % w])
            length = self.streak_length_px * float(np.clip(10.0 / max(d_streak, 0.5), 0.25, 2.0))
            dx = math.cos(angles[i]) * length / 2.0
            dy = math.sin(angles[i]) * length / 2.0
            draw_segment(layer, cx[i] - dx, cy[i] - dy, cx[i] + dx, cy[i] + dy, self.streak_width_px, 1.0)
        return np.clip(out + self.streak_brightness * layer[:, :, None], 0.0, 1.0)


# ---------------------------------------------------------------------------
# Day-to-night (photometric substitute for a learned translation model)


@register_module
class NightModule(PerturbationModule):
    module_name = "night"
    PARAM_KEYS = frozenset({"exposure_scale", "blue_shift", "gamma", "noise_sigma"})

    def __init__(self, params):
        super().__init__(params)
        self.exposure_scale = opt_number(params, "exposure_scale", 0.25, gt=0)
        self.blue_shift = opt_number(params, "blue_shift", 1.15, gt=0)
        self.gamma = opt_number(params, "gamma", 1.4, gt=0)
        self.noise_sigma = opt_number(params, "noise_sigma", 0.02, ge=0)

    def apply(self, image, depth, frame_index, stream):
        out = np.power(image * self.exposure_scale, self.gamma)
        out[:, :, 2] *= self.blue_shift
        out = np.clip(out, 0.0, 1.0)
        if self.noise_sigma > 0:
            rng = rng_from_seed(self.frame_seed(frame_index, stream))
            out = out + rng.normal(0.0, self.noise_sigma, size=out.shape).astype(np.float32)
        return np.clip(out, 0.0, 1.0).astype(np.float32)
