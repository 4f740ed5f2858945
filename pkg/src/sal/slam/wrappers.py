"""SLAM wrappers: stage a sequence, run the executable, normalize output.

A wrapper spec describes how to lay the dataset out for one algorithm,
which settings file a (dataset, sequence) pair needs, how to invoke the
binary, and how to recognize failure. Completed runs always yield a
trajectory in the common TUM text format.
"""

from __future__ import annotations

import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import SlamRunError, TrajectoryFormatError
from ..trajectory import Trajectory, convert_trajectory

_PLACEHOLDERS = {"sequence_dir", "settings", "output"}
DEFAULT_TIMEOUT_S = 1800.0
_LOG_EXCERPT_CHARS = 2000


@dataclass(frozen=True)
class StagingRule:
    source: str  # relative to the sequence dir
    target: str  # relative to the staged dir
    mode: str = "link"  # link | copy


@dataclass(frozen=True)
class SettingsRule:
    match: str  # exact sequence id, or numeric range "04-12"
    file: str

    def matches(self, sequence: str) -> bool:
        if self.match == sequence:
            return True
        lo, sep, hi = self.match.partition("-")
        if sep and lo.strip().isdigit() and hi.strip().isdigit() and sequence.isdigit():
            return int(lo) <= int(sequence) <= int(hi)
        return False


@dataclass(frozen=True)
class SlamWrapperSpec:
    algorithm: str
    executable: Path | None = None
    args: tuple = ()
    settings_rules: dict = field(default_factory=dict)  # dataset -> (SettingsRule, ...)
    staging: tuple = ()
    output_format: str = "tum"
    timeout_s: float = DEFAULT_TIMEOUT_S
    failure_log_markers: tuple = ()
    base_dir: Path | None = None

    def __post_init__(self):
        for arg in self.args:
            for piece in _iter_placeholders(arg):
                if piece not in _PLACEHOLDERS:
                    raise SlamRunError(f"argument template references undefined placeholder '{{{piece}}}'")


def _iter_placeholders(template: str):
    start = 0
    while True:
        open_i = template.find("{", start)
        if open_i < 0:
            return
        close_i = template.find("}", open_i)
        if close_i < 0:
            return
        yield template[open_i + 1 : close_i]
        start = close_i + 1


def load_wrapper_spec(path: str | Path) -> SlamWrapperSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise SlamRunError(f"cannot read wrapper spec {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SlamRunError(f"wrapper spec {path} is not a mapping")
    rules = {}
    for dataset, entries in (doc.get("settings") or {}).items():
        rules[str(dataset)] = tuple(
            SettingsRule(str(e["match"]), str(e["file"])) for e in entries
        )
    staging = tuple(
        StagingRule(str(e["source"]), str(e["target"]), str(e.get("mode", "link")))
        for e in (doc.get("staging") or [])
    )
    return SlamWrapperSpec(
        algorithm=str(doc.get("algorithm", path.stem)),
        executable=Path(doc["executable"]) if doc.get("executable") else None,
        args=tuple(str(a) for a in (doc.get("args") or [])),
        settings_rules=rules,
        staging=staging,
        output_format=str(doc.get("output_format", "tum")),
        timeout_s=float(doc.get("timeout_s", DEFAULT_TIMEOUT_S)),
        failure_log_markers=tuple(str(m) for m in (doc.get("failure_log_markers") or [])),
        base_dir=path.parent,
    )


def mock_wrapper_spec() -> SlamWrapperSpec:
    """Built-in deterministic mock used for desk-scale end-to-end runs."""
    return SlamWrapperSpec(algorithm="mock")


def stage_sequence(wrapper: SlamWrapperSpec, sequence_dir: str | Path, workdir: str | Path) -> Path:
    """Stage a sequence per the wrapper rules; the source is never touched.

    With no rules the sequence directory itself is returned (passthrough).
    """
    sequence_dir = Path(sequence_dir)
    if not sequence_dir.exists():
        raise SlamRunError(f"sequence directory does not exist: {sequence_dir}")
    if not wrapper.staging:
        return sequence_dir
    staged = Path(workdir) / "staged"
    staged.mkdir(parents=True, exist_ok=True)
    for rule in wrapper.staging:
        src = sequence_dir / rule.source
        if not src.exists():
            raise SlamRunError(f"staging rule source missing: {rule.source} -> {rule.target}")
        dst = staged / rule.target
        dst.parent.mkdir(parents=True, exist_ok=True)
        if dst.is_symlink() or dst.exists():
            if dst.is_dir() and not dst.is_symlink():
                shutil.rmtree(dst)
            else:
                dst.unlink()
        if rule.mode == "copy":
            if src.is_dir():
                shutil.copytree(src, dst)
            else:
                shutil.copyfile(src, dst)
        else:
            dst.symlink_to(src.resolve())
    return staged


def resolve_settings(wrapper: SlamWrapperSpec, dataset: str, sequence: str) -> Path:
    """Deterministic (dataset, sequence) -> settings file mapping."""
    rules = wrapper.settings_rules.get(dataset)
    if rules is None:
        raise SlamRunError(f"no settings resolver defined for dataset '{dataset}'")
    for rule in rules:
        if rule.matches(sequence):
            base = wrapper.base_dir or Path(".")
            return base / rule.file
    raise SlamRunError(f"no settings rule matches ({dataset}, '{sequence}')")


@dataclass(frozen=True)
class SlamRunOutcome:
    status: str  # completed | tracking_failure | timeout | crashed
    trajectory: Trajectory | None
    log_excerpt: str = ""

    def __post_init__(self):
        if self.status == "completed" and self.trajectory is None:
            raise SlamRunError("completed run must carry a trajectory")

    @property
    def failed(self) -> bool:
        return self.status != "completed"


def execute_slam(
    wrapper: SlamWrapperSpec,
    staged_dir: str | Path,
    settings: Path | None,
    run_index: int,
    run_dir: str | Path,
    mock_inputs=None,
    timeout_s: float | None = None,
) -> SlamRunOutcome:
    """Run the wrapper's executable as an isolated child process.

    stdout/stderr are captured to files under run_dir; a wall-clock
    timeout yields the 'timeout' status rather than an error. The mock
    wrapper is dispatched in-process.
    """
    if wrapper.algorithm == "mock":
        if mock_inputs is None:
            raise SlamRunError("mock wrapper needs mock inputs (manifest, gt, baseline root, seed)")
        from .mock import mock_slam_run

        return mock_slam_run(*mock_inputs)

    if wrapper.executable is None or not Path(wrapper.executable).exists():
        raise SlamRunError(f"wrapper executable not found: {wrapper.executable}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    output_path = run_dir / "trajectory_raw.txt"
    substitutions = {
        "sequence_dir": str(staged_dir),
        "settings": str(settings) if settings else "",
        "output": str(output_path),
    }
    argv = [str(wrapper.executable)] + [a.format(**substitutions) for a in wrapper.args]

    stdout_path = run_dir / "stdout.log"
    stderr_path = run_dir / "stderr.log"
    timeout = timeout_s if timeout_s is not None else wrapper.timeout_s
    try:
        with open(stdout_path, "w") as out_f, open(stderr_path, "w") as err_f:
            proc = subprocess.run(
                argv, cwd=str(staged_dir), stdout=out_f, stderr=err_f, timeout=timeout
            )
    except subprocess.TimeoutExpired:
        return SlamRunOutcome("timeout", None, _excerpt(stdout_path, stderr_path))
    except OSError as exc:
        raise SlamRunError(f"cannot spawn {argv[0]}: {exc}") from exc

    log = _excerpt(stdout_path, stderr_path)
    if proc.returncode != 0:
        return SlamRunOutcome("crashed", None, log)
    if not output_path.exists():
        return SlamRunOutcome("tracking_failure", None, log)
    for marker in wrapper.failure_log_markers:
        if marker in log:
            return SlamRunOutcome("tracking_failure", None, log)
    try:
        trajectory = convert_trajectory(output_path, wrapper.output_format)
    except TrajectoryFormatError as exc:
        return SlamRunOutcome("tracking_failure", None, f"{log}\n[unparseable trajectory: {exc}]")
    return SlamRunOutcome("completed", trajectory, log)


def _excerpt(stdout_path: Path, stderr_path: Path) -> str:
    parts = []
    for path in (stdout_path, stderr_path):
        if path.exists():
            text = path.read_text(errors="replace")
            if text:
                parts.append(text[-_LOG_EXCERPT_CHARS:])
    return "\n".join(parts)
