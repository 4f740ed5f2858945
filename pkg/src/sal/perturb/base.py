"""Perturbation module lifecycle: registry, setup/apply/cleanup, composition.

Each effect is a module class with a ``module_name``, an optional
``SEARCHABLE_PARAMS`` map declaring which parameters boundary search may
vary, and the three lifecycle methods. ``setup()`` receives the dataset
context and prepares per-sequence state (overlays, patterns, plans);
``apply()`` transforms one frame; ``cleanup()`` releases resources.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..config import PERTURBATION_TYPES, PerturbationSpec
from ..errors import PerturbationError
from ..seeding import derive_frame_seed
from ..datasets.manifest import DepthMap, SequenceManifest


@dataclass(frozen=True)
class BoundaryParamSpec:
    """Declares one searchable parameter of a module."""

    domain: str  # "integer" | "real"
    canonicalize: Callable | None = None

    def __post_init__(self):
        if self.domain not in ("integer", "real"):
            raise PerturbationError(f"invalid parameter domain '{self.domain}'")

    def to_module_value(self, numeric):
        return self.canonicalize(numeric) if self.canonicalize is not None else numeric


@dataclass
class PerturbationContext:
    """What a module sees of the sequence it will perturb."""

    manifest: SequenceManifest
    dataset_dir: Path
    n_frames: int
    scratch_dir: Path
    master_seed: int
    seed_scope: str = ""

    def __post_init__(self):
        if self.n_frames != len(self.manifest.frames):
            raise PerturbationError("context frame count does not match manifest")


class PerturbationModule:
    module_name = "base"
    SEARCHABLE_PARAMS: dict[str, BoundaryParamSpec] = {}
    PARAM_KEYS: frozenset = frozenset()
    requires_depth = False
    sequence_level = False

    def __init__(self, params: dict):
        unknown = set(params) - set(self.PARAM_KEYS)
        if unknown:
            key = sorted(unknown)[0]
            raise PerturbationError(f"unknown parameter '{key}' for {self.module_name}")
        self.params = dict(params)
        self._ctx: PerturbationContext | None = None
        self._seed_name = self.module_name

    # -- lifecycle ---------------------------------------------------------

    def setup(self, ctx: PerturbationContext) -> None:
        self._ctx = ctx
        self._seed_name = ctx.seed_scope or self.module_name

    def apply(self, image: np.ndarray, depth: DepthMap | None, frame_index: int, stream: str) -> np.ndarray:
        raise NotImplementedError

    def cleanup(self) -> None:
        self._ctx = None

    # -- helpers -----------------------------------------------------------

    @property
    def ctx(self) -> PerturbationContext:
        if self._ctx is None:
            raise PerturbationError(f"{self.module_name}: apply called outside setup/cleanup lifecycle")
        return self._ctx

    def frame_seed(self, frame_index: int, stream: str | int) -> int:
        return derive_frame_seed(self.ctx.master_seed, self._seed_name, frame_index, stream)

    def setup_seed(self, stream: str | int = 0) -> int:
        return derive_frame_seed(self.ctx.master_seed, self._seed_name + "/setup", 0, stream)

    def resolve_depth(self, depth: DepthMap | None, image_shape) -> np.ndarray:
        """Metric depth for a frame, invalid pixels filled with the median.

        Falls back to a configured constant plane; errors when neither a
        depth map nor a fallback is available.
        """
        if depth is not None:
            return depth.filled()
        fallback = self.params.get("fallback_depth_m")
        if fallback is None:
            raise PerturbationError(
                f"{self.module_name} requires depth but none is available "
                "(configure a depth source or fallback_depth_m)"
            )
        h, w = image_shape[:2]
        return np.full((h, w), float(fallback), dtype=np.float32)


# ---------------------------------------------------------------------------
# Parameter validation helpers


def req_number(params: dict, key: str, *, gt=None, ge=None, lt=None, le=None) -> float:
    if key not in params:
        raise PerturbationError(f"missing required parameter '{key}'")
    return opt_number(params, key, default=None, gt=gt, ge=ge, lt=lt, le=le)


def opt_number(params: dict, key: str, default, *, gt=None, ge=None, lt=None, le=None) -> float:
    value = params.get(key, default)
    if value is None:
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PerturbationError(f"{key} must be a number")
    value = float(value)
    if gt is not None and not value > gt:
        raise PerturbationError(f"{key} must be > {gt}")
    if ge is not None and not value >= ge:
        raise PerturbationError(f"{key} must be >= {ge}")
    if lt is not None and not value < lt:
        raise PerturbationError(f"{key} must be < {lt}")
    if le is not None and not value <= le:
        raise PerturbationError(f"{key} must be <= {le}")
    return value


def req_int(params: dict, key: str, *, ge=None, gt=None, lt=None) -> int:
    value = req_number(params, key, ge=ge, gt=gt, lt=lt)
    if value != int(value):
        raise PerturbationError(f"{key} must be an integer")
    return int(value)


# ---------------------------------------------------------------------------
# Registry


_REGISTRY: dict[str, type[PerturbationModule]] = {}


def register_module(cls: type[PerturbationModule]) -> type[PerturbationModule]:
    if cls.module_name not in PERTURBATION_TYPES:
        raise PerturbationError(f"module name '{cls.module_name}' is not a declared perturbation type")
    _REGISTRY[cls.module_name] = cls
    return cls


def module_class(type_id: str) -> type[PerturbationModule]:
    try:
        return _REGISTRY[type_id]
    except KeyError:
        raise PerturbationError(f"unknown perturbation type '{type_id}'") from None


def registered_types() -> frozenset:
    return frozenset(_REGISTRY)


def searchable_params(type_id: str) -> dict[str, BoundaryParamSpec]:
    """Declared searchable parameters for a module type (copy)."""
    return dict(module_class(type_id).SEARCHABLE_PARAMS)


# ---------------------------------------------------------------------------
# Instances


@dataclass
class PerturbationInstance:
    """An instantiated spec: modules with their per-sequence state set up.

    Frame-level children run in listed order inside ``apply_frame``;
    sequence-level children (transport re-encode, frame drop) are exposed
    separately and run after all per-frame work, whatever their listed
    position.
    """

    spec: PerturbationSpec
    frame_modules: list = field(default_factory=list)
    sequence_modules: list = field(default_factory=list)
    _active: bool = True

    @property
    def requires_depth(self) -> bool:
        return any(m.requires_depth for m in self.frame_modules)

    def apply_frame(self, image: np.ndarray, depth: DepthMap | None, frame_index: int, stream: str) -> np.ndarray:
        if not self._active:
            raise PerturbationError("apply called after cleanup")
        out = image
        for module in self.frame_modules:
            out = module.apply(out, depth, frame_index, stream)
        return out

    def cleanup(self) -> None:
        for module in self.frame_modules + self.sequence_modules:
            module.cleanup()
        self._active = False


def _collect_modules(spec: PerturbationSpec, ctx: PerturbationContext, scope: str, instance: PerturbationInstance):
    if spec.type == "composite":
        if not spec.modules:
            raise PerturbationError("composite must have at least one child module")
        for child in spec.modules:
            _collect_modules(child, ctx, f"{scope}/{child.name}", instance)
        return
    cls = module_class(spec.type)
    module = cls(spec.parameters)
    child_ctx = PerturbationContext(
        manifest=ctx.manifest,
        dataset_dir=ctx.dataset_dir,
        n_frames=ctx.n_frames,
        scratch_dir=ctx.scratch_dir,
        master_seed=ctx.master_seed,
        seed_scope=scope,
    )
    module.setup(child_ctx)
    if module.sequence_level:
        instance.sequence_modules.append(module)
    else:
        instance.frame_modules.append(module)


def instantiate(spec: PerturbationSpec, ctx: PerturbationContext) -> PerturbationInstance:
    """Validate parameters and run module setup for a spec (recursively)."""
    instance = PerturbationInstance(spec=spec)
    _collect_modules(spec, ctx, ctx.seed_scope or spec.name, instance)
    return instance


def resolve_searchable(spec: PerturbationSpec, parameter: str) -> tuple[PerturbationSpec, BoundaryParamSpec]:
    """Find the (sub)spec whose module type declares the given parameter.

    For composites, children are scanned in order; the first declaring
    module wins. Raises when no module declares the parameter.
    """
    if spec.type == "composite":
        for child in spec.modules:
            try:
                return resolve_searchable(child, parameter)
            except PerturbationError:
                continue
        raise PerturbationError(
            f"parameter '{parameter}' is not searchable in composite '{spec.name}'"
        )
    declared = searchable_params(spec.type)
    if parameter not in declared:
        raise PerturbationError(
            f"parameter '{parameter}' is not in SEARCHABLE_PARAMS for module '{spec.type}'"
        )
    return spec, declared[parameter]


def override_spec_parameter(spec: PerturbationSpec, target: PerturbationSpec, key: str, value) -> PerturbationSpec:
    """Copy of spec with target's parameter replaced (single-point override)."""
    if spec is target:
        return spec.with_parameter(key, value)
    if spec.type == "composite":
        children = tuple(override_spec_parameter(c, target, key, value) for c in spec.modules)
        return PerturbationSpec(spec.name, spec.type, dict(spec.parameters), children)
    return spec
