"""Video transport effects: constant-bitrate re-encoding and frame drops.

Both are sequence-level: they transform a whole staged sequence after all
per-frame effects have been written.
"""

from __future__ import annotations

import math
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from ..errors import PerturbationError
from ..seeding import rng_from_seed
from ..datasets.manifest import FrameRecord, SequenceManifest
from .base import (
    BoundaryParamSpec,
    PerturbationModule,
    opt_number,
    register_module,
)

ENCODER_ENV_VAR = "SAL_ENCODER_PATH"
STUB_REFERENCE_BPS = 8e6  # a comfortably clean bitrate for the stub's scale law

_BITRATE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([kKmM]?)\s*$")
_UNIT_FACTORS = {"": 1.0, "k": 1e3, "K": 1e3, "m": 1e6, "M": 1e6}


def parse_bitrate(value) -> float:
    """Bitrate string like '0.3M' or '800k' (or a bare number) to bits/s."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        bps = float(value)
    else:
        m = _BITRATE_RE.match(str(value))
        if not m:
            raise PerturbationError(f"cannot parse bitrate '{value}'")
        bps = float(m.group(1)) * _UNIT_FACTORS[m.group(2)]
    if bps <= 0:
        raise PerturbationError(f"bitrate must be positive, got '{value}'")
    return bps


@dataclass(frozen=True)
class TransportParams:
    target_bitrate: str
    max_bitrate: str
    vbv_buffer: str
    codec: str = "libx264"
    frame_rate_hz: float = 10.0

    def __post_init__(self):
        for label, value in (
            ("target_bitrate", self.target_bitrate),
            ("max_bitrate", self.max_bitrate),
            ("vbv_buffer", self.vbv_buffer),
        ):
            try:
                parse_bitrate(value)
            except PerturbationError:
                raise PerturbationError(f"{label} must parse to a positive bitrate, got '{value}'") from None


def encoder_args(input_pattern: str, output_path: str, params: TransportParams) -> list[str]:
    """Rate-control argv for the external encoder (ffmpeg CLI convention)."""
    return [
        "-y",
        "-framerate",
        f"{params.frame_rate_hz:g}",
        "-i",
        input_pattern,
        "-c:v",
        params.codec,
        "-b:v",
        str(params.target_bitrate),
        "-maxrate",
        str(params.max_bitrate),
        "-bufsize",
        str(params.vbv_buffer),
        "-preset",
        "medium",
        "-pix_fmt",
        "yuv420p",
        output_path,
    ]


def decoder_args(input_path: str, output_pattern: str) -> list[str]:
    return ["-y", "-i", input_path, "-start_number", "0", output_pattern]


def find_encoder_binary() -> str | None:
    configured = os.environ.get(ENCODER_ENV_VAR)
    if configured:
        return configured
    return shutil.which("ffmpeg")


def stub_scale_factor(target_bps: float, reference_bps: float = STUB_REFERENCE_BPS) -> float:
    return float(np.clip(math.sqrt(target_bps / reference_bps), 0.1, 1.0))


def _stub_reencode(image_files: list[Path], params: TransportParams) -> None:
    """Bitrate-derived downscale/upscale. Non-physical; test stand-in only."""
    factor = stub_scale_factor(parse_bitrate(params.target_bitrate))
    if factor >= 1.0:
        return
    for path in image_files:
        img = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if img is None:
            raise PerturbationError(f"cannot read staged image: {path}")
        h, w = img.shape[:2]
        small = cv2.resize(img, (max(1, round(w * factor)), max(1, round(h * factor))), interpolation=cv2.INTER_AREA)
        restored = cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR)
        if not cv2.imwrite(str(path), restored):
            raise PerturbationError(f"cannot write staged image: {path}")


def _run_encoder(argv: list[str]) -> None:
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        tail = proc.stderr[-2000:] if proc.stderr else "<no stderr>"
        raise PerturbationError(f"encoder exited with status {proc.returncode}: {tail}")


def _external_reencode(image_files: list[Path], params: TransportParams, binary: str) -> None:
    """Encode frames to one CBR stream, decode back, restore filenames."""
    with tempfile.TemporaryDirectory(prefix="sal_encode_") as tmp:
        tmp_dir = Path(tmp)
        stage = tmp_dir / "in"
        stage.mkdir()
        for i, path in enumerate(image_files):
            shutil.copyfile(path, stage / f"{i:08d}.png")
        video = tmp_dir / "stream.mp4"
        _run_encoder([binary] + encoder_args(str(stage / "%08d.png"), str(video), params))
        out = tmp_dir / "out"
        out.mkdir()
        _run_encoder([binary] + decoder_args(str(video), str(out / "%08d.png")))
        decoded = sorted(out.glob("*.png"))
        if len(decoded) != len(image_files):
            raise PerturbationError(
                f"decoder returned {len(decoded)} frames for {len(image_files)} inputs"
            )
        for src, dst in zip(decoded, image_files):
            shutil.copyfile(src, dst)


def transport_reencode(
    image_files: list[Path],
    params: TransportParams,
    mode: str = "auto",
    log: list | None = None,
) -> None:
    """Re-encode a staged sequence in place under CBR rate control.

    mode: 'external' requires an encoder binary (SAL_ENCODER_PATH or
    ffmpeg on PATH), 'stub' always uses the built-in scale stub, 'auto'
    prefers external and falls back to the stub.
    """
    if not image_files:
        raise PerturbationError("no images to re-encode")
    binary = find_encoder_binary()
    if mode not in ("auto", "external", "stub"):
        raise PerturbationError(f"unknown transport encoder mode '{mode}'")
    if mode == "external" and binary is None:
        raise PerturbationError(
            f"external encoder selected but no binary found ({ENCODER_ENV_VAR} unset, ffmpeg not on PATH)"
        )
    if mode == "stub" or (mode == "auto" and binary is None):
        if log is not None:
            log.append("transport: built-in stub re-encode (non-physical)")
        _stub_reencode(image_files, params)
        return
    if log is not None:
        log.append(f"transport: external encoder {binary}")
    _external_reencode(image_files, params, binary)


@register_module
class NetworkDegradationModule(PerturbationModule):
    module_name = "network_degradation"
    sequence_level = True
    SEARCHABLE_PARAMS = {
        "target_bitrate": BoundaryParamSpec(domain="integer", canonicalize=lambda v: f"{int(v)}M")
    }
    PARAM_KEYS = frozenset({"target_bitrate", "max_bitrate", "vbv_buffer", "codec", "encoder"})

    def __init__(self, params):
        super().__init__(params)
        if "target_bitrate" not in params:
            raise PerturbationError("missing required parameter 'target_bitrate'")
        target = str(params["target_bitrate"])
        target_bps = parse_bitrate(target)
        # The cap defaults to the target (strict CBR) and the VBV buffer
        # to twice the target's per-second budget.
        max_rate = str(params.get("max_bitrate", target))
        vbv = str(params.get("vbv_buffer", f"{2 * target_bps / 1e6:g}M"))
        self.encoder_mode = str(params.get("encoder", "auto"))
        self.codec = str(params.get("codec", "libx264"))
        self._target, self._max, self._vbv = target, max_rate, vbv
        TransportParams(target, max_rate, vbv, self.codec)  # validate

    def transport_params(self, frame_rate_hz: float) -> TransportParams:
        return TransportParams(self._target, self._max, self._vbv, self.codec, frame_rate_hz)

    def apply_sequence(self, manifest: SequenceManifest, log: list) -> SequenceManifest:
        files = [frame.images[stream] for frame in manifest.frames for stream in manifest.streams]
        transport_reencode(files, self.transport_params(manifest.frame_rate_hz), self.encoder_mode, log)
        return manifest

    def apply(self, image, depth, frame_index, stream):
        raise PerturbationError("network_degradation is sequence-level; it has no per-frame apply")


# ---------------------------------------------------------------------------
# Frame drop


@dataclass(frozen=True)
class FrameDropPlan:
    mode: str  # "random" | "periodic"
    rate_or_period: float
    seed: int
    kept: tuple  # sorted kept frame indices
    dropped: tuple

    def __post_init__(self):
        if not self.kept:
            raise PerturbationError("frame drop plan would drop all frames")


def frame_drop_plan(n_frames: int, mode: str, rate_or_period, seed: int) -> FrameDropPlan:
    """Kept/dropped indices. Random mode always keeps frame 0; periodic
    mode drops indices i with (i + 1) % N == 0."""
    if n_frames < 2:
        raise PerturbationError("frame drop needs at least 2 frames")
    if mode == "random":
        rate = float(rate_or_period)
        if not 0 <= rate < 100:
            raise PerturbationError("drop_rate_percent must be in [0, 100)")
        draws = rng_from_seed(seed).random(n_frames)
        kept = [0] + [i for i in range(1, n_frames) if draws[i] >= rate / 100.0]
    elif mode == "periodic":
        period = int(rate_or_period)
        if period < 2:
            raise PerturbationError("period must be >= 2")
        kept = [i for i in range(n_frames) if (i + 1) % period != 0]
    else:
        raise PerturbationError(f"unknown frame drop mode '{mode}'")
    dropped = tuple(sorted(set(range(n_frames)) - set(kept)))
    return FrameDropPlan(mode=mode, rate_or_period=float(rate_or_period), seed=seed, kept=tuple(kept), dropped=dropped)


def rewrite_metadata_rows(text: str, dropped_basenames: set[str]) -> str:
    """Filter data rows that reference dropped images; keep comments/headers."""
    lines = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            if any(name in line for name in dropped_basenames):
                continue
        lines.append(line)
    return "\n".join(lines) + ("\n" if text.endswith("\n") else "")


def frame_drop_apply(manifest: SequenceManifest, plan: FrameDropPlan, output_root: Path) -> SequenceManifest:
    """Apply a drop plan, producing a sequence with realistic gaps.

    Kept frames keep their original filenames; metadata sidecars are
    rewritten with dropped rows removed. When output_root equals the
    manifest root the drop happens in place.
    """
    if max(plan.kept, default=-1) >= len(manifest.frames) or (plan.dropped and max(plan.dropped) >= len(manifest.frames)):
        raise PerturbationError("frame drop plan does not match manifest length")
    output_root = Path(output_root)
    in_place = output_root.resolve() == manifest.dataset_root.resolve()
    dropped_names = set()
    for i in plan.dropped:
        for stream in manifest.streams:
            dropped_names.add(manifest.frames[i].images[stream].name)

    new_frames = []
    for new_index, old_index in enumerate(plan.kept):
        frame = manifest.frames[old_index]
        images = {}
        for stream in manifest.streams:
            rel = frame.images[stream].relative_to(manifest.dataset_root)
            dst = output_root / rel
            if not in_place:
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(frame.images[stream], dst)
            images[stream] = dst
        depth = None
        if frame.depth is not None:
            rel = frame.depth.relative_to(manifest.dataset_root)
            dst = output_root / rel
            if not in_place and frame.depth.exists():
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(frame.depth, dst)
            depth = dst
        new_frames.append(FrameRecord(index=new_index, timestamp=frame.timestamp, images=images, depth=depth))

    if in_place:
        for i in plan.dropped:
            for stream in manifest.streams:
                manifest.frames[i].images[stream].unlink(missing_ok=True)
            if manifest.frames[i].depth is not None:
                manifest.frames[i].depth.unlink(missing_ok=True)

    new_metadata = []
    for meta in manifest.metadata_files:
        rel = meta.relative_to(manifest.dataset_root)
        dst = output_root / rel
        source = dst if (in_place or dst.exists()) else meta
        if source.exists():
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_text(rewrite_metadata_rows(source.read_text(), dropped_names))
        new_metadata.append(dst)

    new_seq_dir = output_root / manifest.sequence_dir.relative_to(manifest.dataset_root)
    return SequenceManifest(
        dataset_type=manifest.dataset_type,
        sequence_id=manifest.sequence_id,
        frames=new_frames,
        streams=manifest.streams,
        calibration=manifest.calibration,
        frame_rate_hz=manifest.frame_rate_hz,
        metadata_files=tuple(new_metadata),
        dataset_root=output_root,
        sequence_dir=new_seq_dir,
        depth_scale=manifest.depth_scale,
        ground_truth=(output_root / manifest.ground_truth.relative_to(manifest.dataset_root))
        if manifest.ground_truth is not None
        else None,
        plot_plane=manifest.plot_plane,
    )


@register_module
class FrameDropModule(PerturbationModule):
    module_name = "frame_drop"
    sequence_level = True
    SEARCHABLE_PARAMS = {"drop_rate_percent": BoundaryParamSpec(domain="integer")}
    PARAM_KEYS = frozenset({"mode", "drop_rate_percent", "period"})

    def __init__(self, params):
        super().__init__(params)
        self.mode = str(params.get("mode", "random"))
        if self.mode == "random":
            self.rate_or_period = opt_number(params, "drop_rate_percent", None, ge=0, lt=100)
            if self.rate_or_period is None:
                raise PerturbationError("missing required parameter 'drop_rate_percent'")
        elif self.mode == "periodic":
            period = params.get("period")
            if period is None:
                raise PerturbationError("missing required parameter 'period'")
            self.rate_or_period = opt_number(params, "period", None, ge=2)
        else:
            raise PerturbationError(f"unknown frame drop mode '{self.mode}'")

    def plan(self, n_frames: int) -> FrameDropPlan:
        seed = self.frame_seed(0, 0)
        return frame_drop_plan(n_frames, self.mode, self.rate_or_period, seed)

    def apply_sequence(self, manifest: SequenceManifest, log: list) -> SequenceManifest:
        plan = self.plan(len(manifest.frames))
        log.append(
            f"frame_drop: {self.mode} kept {len(plan.kept)}/{len(manifest.frames)} frames"
        )
        return frame_drop_apply(manifest, plan, manifest.dataset_root)

    def apply(self, image, depth, frame_index, stream):
        raise PerturbationError("frame_drop is sequence-level; it has no per-frame apply")
