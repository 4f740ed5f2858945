import numpy as np
import pytest

from sal.config import PerturbationSpec
from sal.datasets.manifest import CameraIntrinsics, FrameRecord, SequenceManifest
from sal.datasets.synthetic import SyntheticSpec, generate_synthetic_sequence
from sal.perturb.base import PerturbationContext, instantiate


def tiny_manifest(tmp_path, width=64, height=48, n_frames=3, streams=("mono",)):
    """In-memory manifest pointing at nonexistent images; enough for module
    setup (dims, seeds) and unit-level apply calls."""
    calib = CameraIntrinsics(fx=60.0, fy=60.0, cx=width / 2, cy=height / 2, width=width, height=height)
    frames = [
        FrameRecord(index=i, timestamp=i / 10.0, images={s: tmp_path / s / f"{i:06d}.png" for s in streams})
        for i in range(n_frames)
    ]
    return SequenceManifest(
        dataset_type="kitti",
        sequence_id="00",
        frames=frames,
        streams=tuple(streams),
        calibration={s: calib for s in streams},
        frame_rate_hz=10.0,
        dataset_root=tmp_path,
        sequence_dir=tmp_path,
    )


@pytest.fixture
def module_ctx(tmp_path):
    def make(width=64, height=48, n_frames=3, master_seed=0, streams=("mono",), scope=""):
        manifest = tiny_manifest(tmp_path, width, height, n_frames, streams)
        return PerturbationContext(
            manifest=manifest,
            dataset_dir=tmp_path,
            n_frames=n_frames,
            scratch_dir=tmp_path / "scratch",
            master_seed=master_seed,
            seed_scope=scope,
        )

    return make


@pytest.fixture
def make_module(module_ctx):
    """Instantiate a single-effect spec against a tiny context."""

    def make(type_id, params, **ctx_kwargs):
        spec = PerturbationSpec(name=f"test_{type_id}", type=type_id, parameters=params)
        ctx = module_ctx(scope=spec.name, **ctx_kwargs)
        return instantiate(spec, ctx)

    return make


@pytest.fixture(scope="session")
def synthetic_sequence(tmp_path_factory):
    """Session-wide 10-frame checkerboard sequence with constant 2 m depth."""
    root = tmp_path_factory.mktemp("synthetic_clean")
    spec = SyntheticSpec(n_frames=10, width=160, height=120, depth_model=("constant", 2.0), seed=3)
    manifest, gt = generate_synthetic_sequence(spec, root)
    return manifest, gt


def checkerboard_image(width=160, height=120, cell=16):
    ys, xs = np.mgrid[0:height, 0:width]
    board = ((xs // cell + ys // cell) % 2).astype(np.float32)
    return np.repeat((0.15 + 0.7 * board)[:, :, None], 3, axis=2)
