"""Bisection search for the severity at which SLAM transitions pass->fail.

The evaluator maps a numeric severity to a raw measurement: an ATE RMSE
in meters, or None for a run with no usable trajectory (tracking failure,
timeout, crash). A trial fails when it has no measurement or its ATE
exceeds the configured threshold. Endpoints are probed first to detect
orientation (failures may sit at either end of the range); the bracket is
then narrowed by midpoint evaluation until its width is within tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import BoundaryConfig, ExperimentConfig, PerturbationSpec
from .errors import BoundarySearchError
from .perturb.base import BoundaryParamSpec, override_spec_parameter, resolve_searchable

Evaluator = Callable[[float], float | None]


@dataclass(frozen=True)
class TrialOutcome:
    value: float  # post-rounding, pre-canonicalize numeric
    ate_rmse: float | None  # None marks a tracking failure
    classification: str  # "pass" | "fail"

    @property
    def failed(self) -> bool:
        return self.classification == "fail"

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "ate_rmse": self.ate_rmse,
            "tracking_failure": self.ate_rmse is None,
            "classification": self.classification,
        }


@dataclass(frozen=True)
class BoundaryResult:
    status: str  # bracket_found | no_boundary_in_range | all_fail | max_iters_reached
    orientation: str | None  # fail_low | fail_high
    fail_value: float | None
    fail_ate: float | None
    pass_value: float | None
    pass_ate: float | None
    trials: tuple  # TrialOutcome, evaluation order

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "orientation": self.orientation,
            "bracket": {
                "fail": {"value": self.fail_value, "ate_rmse": self.fail_ate},
                "pass": {"value": self.pass_value, "ate_rmse": self.pass_ate},
            },
            "trials": [t.to_dict() for t in self.trials],
            "evaluations": len(self.trials),
        }


def _round_value(value: float, domain: str) -> float:
    return float(math.floor(value)) if domain == "integer" else float(value)


def boundary_search(cfg: BoundaryConfig, param_spec: BoundaryParamSpec, evaluator: Evaluator) -> BoundaryResult:
    """Bisection over [lower_bound, upper_bound].

    max_iters counts midpoint evaluations only, so the total number of
    trials is at most max_iters + 2. Integer-domain midpoints are floored.
    Repeated probe values are served from a cache rather than re-run.
    """
    cache: dict[float, TrialOutcome] = {}
    trials: list[TrialOutcome] = []

    def probe(value: float) -> TrialOutcome:
        value = _round_value(value, param_spec.domain)
        if value in cache:
            return cache[value]
        measurement = evaluator(value)
        if measurement is not None:
            measurement = float(measurement)
        failed = measurement is None or measurement > cfg.ate_rmse_fail
        outcome = TrialOutcome(value, measurement, "fail" if failed else "pass")
        cache[value] = outcome
        trials.append(outcome)
        return outcome

    low = probe(cfg.lower_bound)
    high = probe(cfg.upper_bound)

    if low.failed and high.failed:
        return BoundaryResult("all_fail", None, low.value, low.ate_rmse, None, None, tuple(trials))
    if not low.failed and not high.failed:
        return BoundaryResult("no_boundary_in_range", None, None, None, low.value, low.ate_rmse, tuple(trials))

    orientation = "fail_low" if low.failed else "fail_high"
    fail, ok = (low, high) if low.failed else (high, low)

    midpoints = 0
    status = "max_iters_reached"
    while True:
        if abs(fail.value - ok.value) <= cfg.tolerance:
            status = "bracket_found"
            break
        if midpoints >= cfg.max_iters:
            break
        candidate = _round_value((fail.value + ok.value) / 2.0, param_spec.domain)
        if candidate == fail.value or candidate == ok.value:
            break  # the domain cannot be refined further
        outcome = probe(candidate)
        midpoints += 1
        if outcome.failed:
            fail = outcome
        else:
            ok = outcome

    return BoundaryResult(
        status,
        orientation,
        fail.value,
        fail.ate_rmse,
        ok.value,
        ok.ate_rmse,
        tuple(trials),
    )


def sweep_boundary(
    lower: float,
    upper: float,
    step: float,
    evaluator: Evaluator,
    fail_threshold: float,
    from_upper: bool,
) -> list[TrialOutcome]:
    """Linear comparison baseline: walk from the passing end in fixed steps
    until the first failure (inclusive). Returns the trials in order."""
    if step <= 0:
        raise BoundarySearchError("sweep step must be > 0")
    trials = []
    value = upper if from_upper else lower
    direction = -step if from_upper else step
    while lower <= value <= upper:
        measurement = evaluator(value)
        failed = measurement is None or measurement > fail_threshold
        trials.append(TrialOutcome(float(value), measurement, "fail" if failed else "pass"))
        if failed:
            break
        value += direction
    return trials


def write_boundary_result(path: str | Path, result: BoundaryResult, cfg: BoundaryConfig) -> None:
    payload = result.to_dict()
    payload["parameter"] = cfg.parameter
    payload["target_perturbation"] = cfg.target_perturbation
    payload["ate_rmse_fail"] = cfg.ate_rmse_fail
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def make_production_evaluator(
    config: ExperimentConfig,
    work_dir: str | Path,
    run_slam: Callable[[PerturbationSpec, Path], float | None],
) -> tuple[Evaluator, BoundaryParamSpec]:
    """Evaluator composing canonicalize -> perturbation pipeline -> SLAM -> ATE.

    run_slam receives the overridden spec and a probe-specific output root
    and must return the ATE RMSE vs ground truth (None for any run without
    a usable trajectory). All other parameters of the target spec stay
    fixed; only the searched parameter is overridden per probe.
    """
    if config.boundary is None:
        raise BoundarySearchError("config has no robustness boundary block")
    cfg = config.boundary
    target = config.spec_by_name(cfg.target_perturbation)
    sub_spec, param_spec = resolve_searchable(target, cfg.parameter)
    work_dir = Path(work_dir)

    def evaluator(value: float) -> float | None:
        module_value = param_spec.to_module_value(value)
        probe_spec = override_spec_parameter(target, sub_spec, cfg.parameter, module_value)
        probe_root = work_dir / f"probe_{value:g}"
        return run_slam(probe_spec, probe_root)

    return evaluator, param_spec
