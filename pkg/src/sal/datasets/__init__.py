from .manifest import CameraIntrinsics, DepthMap, FrameRecord, SequenceManifest
from .adapters import load_depth, load_frame, open_sequence
from .depth import chain_providers, depth_provider
from .synthetic import SyntheticSpec, generate_synthetic_sequence

__all__ = [
    "CameraIntrinsics",
    "DepthMap",
    "FrameRecord",
    "SequenceManifest",
    "open_sequence",
    "load_frame",
    "load_depth",
    "depth_provider",
    "chain_providers",
    "SyntheticSpec",
    "generate_synthetic_sequence",
]
