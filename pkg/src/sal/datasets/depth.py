"""Depth providers, consulted in order: native -> file_dir -> constant."""

from __future__ import annotations

from pathlib import Path

from ..errors import DatasetError
from .adapters import load_depth
from .imaging import load_depth_file
from .manifest import DepthMap, SequenceManifest


class DepthProvider:
    kind = "base"

    def depth_for(self, manifest: SequenceManifest, index: int) -> DepthMap | None:
        raise NotImplementedError


class NativeDepthProvider(DepthProvider):
    kind = "native"

    def depth_for(self, manifest, index):
        return load_depth(manifest, index)


class FileDirDepthProvider(DepthProvider):
    """Per-frame depth files (16-bit PNG with a scale, or .f32 rasters)."""

    kind = "file_dir"

    def __init__(self, directory: str | Path, png_scale: float = 5000.0):
        self.directory = Path(directory)
        self.png_scale = float(png_scale)
        if not self.directory.is_dir():
            raise DatasetError(f"depth directory does not exist: {self.directory}")
        self._files = sorted(
            p for p in self.directory.iterdir() if p.suffix.lower() in (".png", ".f32")
        )
        if not self._files:
            raise DatasetError(f"no depth files in {self.directory}")

    def depth_for(self, manifest, index):
        if len(self._files) != len(manifest.frames):
            raise DatasetError(
                f"depth directory {self.directory} has {len(self._files)} files "
                f"for {len(manifest.frames)} frames"
            )
        return load_depth_file(self._files[index], self.png_scale)


class ConstantDepthProvider(DepthProvider):
    kind = "constant"

    def __init__(self, depth_m: float):
        if depth_m <= 0:
            raise DatasetError("constant depth must be > 0")
        self.depth_m = float(depth_m)

    def depth_for(self, manifest, index):
        calib = manifest.calibration[manifest.reference_stream]
        return DepthMap.constant(self.depth_m, calib.height, calib.width)


class ChainDepthProvider(DepthProvider):
    kind = "chain"

    def __init__(self, providers):
        self.providers = list(providers)

    def depth_for(self, manifest, index):
        for provider in self.providers:
            depth = provider.depth_for(manifest, index)
            if depth is not None:
                return depth
        return None


def depth_provider(kind: str, **params) -> DepthProvider:
    if kind == "native":
        return NativeDepthProvider()
    if kind == "file_dir":
        return FileDirDepthProvider(params["directory"], params.get("png_scale", 5000.0))
    if kind == "constant":
        return ConstantDepthProvider(params["depth_m"])
    raise DatasetError(f"unknown depth provider kind '{kind}'")


def chain_providers(*providers: DepthProvider) -> ChainDepthProvider:
    return ChainDepthProvider(providers)


def provider_chain_for(selector) -> ChainDepthProvider:
    """Build the configured chain for a dataset selector."""
    providers: list[DepthProvider] = [NativeDepthProvider()]
    if selector.depth_dir is not None:
        providers.append(FileDirDepthProvider(selector.depth_dir, selector.depth_scale))
    if selector.constant_depth_m is not None:
        providers.append(ConstantDepthProvider(selector.constant_depth_m))
    return ChainDepthProvider(providers)
