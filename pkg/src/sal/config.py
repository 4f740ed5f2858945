"""Experiment configuration: schema, YAML parsing, and serialization.

The on-disk format is a YAML mapping with the top-level sections
``experiment``, ``dataset``, ``perturbations``, ``output`` and an optional
``robustness_boundary`` block. The schema is strict: unknown keys are
rejected so that a typo in a severity parameter cannot silently corrupt a
study.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

# Effect type identifiers accepted in a perturbation spec. The engine
# registry must provide exactly this set.
PERTURBATION_TYPES = frozenset(
    {
        "fog",
        "rain",
        "night",
        "lens_soiling",
        "cracked_lens",
        "motion_blur",
        "network_degradation",
        "frame_drop",
        "composite",
    }
)

DATASET_TYPES = frozenset({"kitti", "tum", "euroc"})

_MAX_SEED = 2**64


@dataclass(frozen=True)
class DatasetSelector:
    """Which dataset sequence an experiment runs on."""

    type: str
    sequence: str
    root: Path = Path(".")
    max_frames: int | None = None
    load_stereo: bool = False
    # Optional depth sources consulted when the dataset has no native depth:
    # a directory of per-frame depth files, and/or a uniform fallback plane.
    depth_dir: Path | None = None
    depth_scale: float = 5000.0
    constant_depth_m: float | None = None


@dataclass(frozen=True)
class PerturbationSpec:
    """Declarative description of one effect (or an ordered composite)."""

    name: str
    type: str
    parameters: dict = field(default_factory=dict)
    modules: tuple["PerturbationSpec", ...] = ()

    def with_parameter(self, key: str, value) -> "PerturbationSpec":
        params = dict(self.parameters)
        params[key] = value
        return PerturbationSpec(self.name, self.type, params, self.modules)


@dataclass(frozen=True)
class BoundaryConfig:
    """Severity interval and failure criterion for boundary search."""

    target_perturbation: str
    parameter: str
    lower_bound: float
    upper_bound: float
    tolerance: float
    max_iters: int
    ate_rmse_fail: float


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetSelector
    perturbations: tuple[PerturbationSpec, ...]
    output_base_dir: Path
    master_seed: int = 0
    runs: int = 1
    boundary: BoundaryConfig | None = None

    def spec_by_name(self, name: str) -> PerturbationSpec:
        for spec in self.perturbations:
            if spec.name == name:
                return spec
        raise ConfigError(f"perturbation '{name}' not found in config")


def _as_mapping(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return node


def _check_keys(node: dict, allowed: set[str], path: str) -> None:
    unknown = set(node) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key '{path}.{key}'" if path else f"unknown key '{key}'")


def _require(node: dict, key: str, path: str):
    if key not in node or node[key] is None:
        raise ConfigError(f"missing required field '{path}.{key}'" if path else f"missing required field '{key}'")
    return node[key]


def _section(doc: dict, key: str) -> dict:
    # A present-but-empty section reads as an empty mapping so the error
    # names the missing child field rather than the whole section.
    if key not in doc:
        raise ConfigError(f"missing required field '{key}'")
    return _as_mapping(doc[key] if doc[key] is not None else {}, key)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    return float(value)


def _parse_perturbation(node, path: str, require_name: bool) -> PerturbationSpec:
    node = _as_mapping(node, path)
    _check_keys(node, {"name", "type", "parameters"}, path)
    type_id = str(_require(node, "type", path))
    if type_id not in PERTURBATION_TYPES:
        raise ConfigError(f"unknown perturbation type '{type_id}' at {path}")
    if require_name:
        name = str(_require(node, "name", path))
    else:
        name = str(node.get("name", type_id))
    if name == "baseline":
        raise ConfigError(f"{path}: 'baseline' is a reserved perturbation name")
    if "/" in name or "\\" in name or name.startswith("."):
        raise ConfigError(f"{path}: perturbation name '{name}' is not filesystem-safe")
    params = dict(_as_mapping(node.get("parameters") or {}, f"{path}.parameters"))

    children: tuple[PerturbationSpec, ...] = ()
    if type_id == "composite":
        raw_children = params.pop("modules", None)
        if not isinstance(raw_children, list) or not raw_children:
            raise ConfigError(f"{path}: composite requires a non-empty 'parameters.modules' list")
        children = tuple(
            _parse_perturbation(child, f"{path}.modules[{i}]", require_name=False)
            for i, child in enumerate(raw_children)
        )
        seen: set[str] = set()
        resolved = []
        for child in children:
            # De-duplicate default child names so seeds stay distinct.
            base, cand, n = child.name, child.name, 2
            while cand in seen:
                cand = f"{base}_{n}"
                n += 1
            seen.add(cand)
            resolved.append(PerturbationSpec(cand, child.type, child.parameters, child.modules))
        children = tuple(resolved)
    return PerturbationSpec(name=name, type=type_id, parameters=params, modules=children)


def _parse_boundary(node, path: str, spec_names: set[str]) -> BoundaryConfig:
    node = _as_mapping(node, path)
    allowed = {
        "target_perturbation",
        "parameter",
        "lower_bound",
        "upper_bound",
        "tolerance",
        "max_iters",
        "ate_rmse_fail",
    }
    _check_keys(node, allowed, path)
    target = str(_require(node, "target_perturbation", path))
    if target not in spec_names:
        raise ConfigError(f"{path}.target_perturbation '{target}' not found in perturbations list")
    lower = _as_number(_require(node, "lower_bound", path), f"{path}.lower_bound")
    upper = _as_number(_require(node, "upper_bound", path), f"{path}.upper_bound")
    tol = _as_number(_require(node, "tolerance", path), f"{path}.tolerance")
    max_iters = _as_int(_require(node, "max_iters", path), f"{path}.max_iters")
    fail = _as_number(_require(node, "ate_rmse_fail", path), f"{path}.ate_rmse_fail")
    if not lower < upper:
        raise ConfigError(f"{path}: lower_bound must be < upper_bound")
    if tol <= 0:
        raise ConfigError(f"{path}: tolerance must be > 0")
    if max_iters < 1:
        raise ConfigError(f"{path}: max_iters must be >= 1")
    if fail <= 0:
        raise ConfigError(f"{path}: ate_rmse_fail must be > 0")
    return BoundaryConfig(target, str(_require(node, "parameter", path)), lower, upper, tol, max_iters, fail)


def parse_experiment_config(source: str | dict) -> ExperimentConfig:
    """Parse and validate an experiment document (YAML text or mapping)."""
    doc = yaml.safe_load(source) if isinstance(source, str) else source
    doc = _as_mapping(doc, "<document>")
    _check_keys(doc, {"experiment", "dataset", "perturbations", "output", "robustness_boundary"}, "")

    exp = _section(doc, "experiment")
    _check_keys(exp, {"name", "master_seed", "runs"}, "experiment")
    name = str(_require(exp, "name", "experiment"))
    master_seed = _as_int(exp.get("master_seed", 0), "experiment.master_seed")
    if not 0 <= master_seed < _MAX_SEED:
        raise ConfigError("experiment.master_seed must be an unsigned 64-bit integer")
    runs = _as_int(exp.get("runs", 1), "experiment.runs")
    if runs < 1:
        raise ConfigError("experiment.runs must be >= 1")

    ds = _section(doc, "dataset")
    _check_keys(
        ds,
        {"type", "root", "sequence", "max_frames", "load_stereo", "depth_dir", "depth_scale", "constant_depth_m"},
        "dataset",
    )
    ds_type = str(_require(ds, "type", "dataset"))
    if ds_type not in DATASET_TYPES:
        raise ConfigError(f"unknown dataset type '{ds_type}' (dataset.type)")
    sequence = str(_require(ds, "sequence", "dataset"))
    max_frames = ds.get("max_frames")
    if max_frames is not None:
        max_frames = _as_int(max_frames, "dataset.max_frames")
        if max_frames < 1:
            raise ConfigError("dataset.max_frames must be >= 1")
    constant_depth = ds.get("constant_depth_m")
    if constant_depth is not None:
        constant_depth = _as_number(constant_depth, "dataset.constant_depth_m")
        if constant_depth <= 0:
            raise ConfigError("dataset.constant_depth_m must be > 0")
    selector = DatasetSelector(
        type=ds_type,
        sequence=sequence,
        root=Path(str(ds.get("root", "."))),
        max_frames=max_frames,
        load_stereo=bool(ds.get("load_stereo", False)),
        depth_dir=Path(str(ds["depth_dir"])) if ds.get("depth_dir") else None,
        depth_scale=_as_number(ds.get("depth_scale", 5000.0), "dataset.depth_scale"),
        constant_depth_m=constant_depth,
    )

    raw_perts = _require(doc, "perturbations", "")
    if not isinstance(raw_perts, list):
        raise ConfigError("perturbations: expected a list")
    specs = tuple(
        _parse_perturbation(p, f"perturbations[{i}]", require_name=True) for i, p in enumerate(raw_perts)
    )
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ConfigError(f"duplicate perturbation name '{dup}'")

    out = _section(doc, "output")
    _check_keys(out, {"base_dir"}, "output")
    base_dir = Path(str(_require(out, "base_dir", "output")))

    boundary = None
    if doc.get("robustness_boundary") is not None:
        boundary = _parse_boundary(doc["robustness_boundary"], "robustness_boundary", set(names))

    return ExperimentConfig(
        name=name,
        dataset=selector,
        perturbations=specs,
        output_base_dir=base_dir,
        master_seed=master_seed,
        runs=runs,
        boundary=boundary,
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_experiment_config(text)


def _spec_to_dict(spec: PerturbationSpec, top_level: bool) -> dict:
    node: dict = {"name": spec.name, "type": spec.type}
    params = dict(spec.parameters)
    if spec.type == "composite":
        params["modules"] = [_spec_to_dict(c, top_level=False) for c in spec.modules]
    if params or top_level:
        node["parameters"] = params
    return node


def config_to_dict(cfg: ExperimentConfig) -> dict:
    ds: dict = {
        "type": cfg.dataset.type,
        "root": str(cfg.dataset.root),
        "sequence": cfg.dataset.sequence,
        "load_stereo": cfg.dataset.load_stereo,
        "depth_scale": cfg.dataset.depth_scale,
    }
    if cfg.dataset.max_frames is not None:
        ds["max_frames"] = cfg.dataset.max_frames
    if cfg.dataset.depth_dir is not None:
        ds["depth_dir"] = str(cfg.dataset.depth_dir)
    if cfg.dataset.constant_depth_m is not None:
        ds["constant_depth_m"] = cfg.dataset.constant_depth_m
    doc = {
        "experiment": {"name": cfg.name, "master_seed": cfg.master_seed, "runs": cfg.runs},
        "dataset": ds,
        "perturbations": [_spec_to_dict(s, top_level=True) for s in cfg.perturbations],
        "output": {"base_dir": str(cfg.output_base_dir)},
    }
    if cfg.boundary is not None:
        b = cfg.boundary
        doc["robustness_boundary"] = {
            "target_perturbation": b.target_perturbation,
            "parameter": b.parameter,
            "lower_bound": b.lower_bound,
            "upper_bound": b.upper_bound,
            "tolerance": b.tolerance,
            "max_iters": b.max_iters,
            "ate_rmse_fail": b.ate_rmse_fail,
        }
    return doc


def serialize_experiment_config(cfg: ExperimentConfig) -> str:
    """YAML text that parses back to an equal config."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
