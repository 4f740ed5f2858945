#!/usr/bin/env python3
"""Compare bisection against a linear severity sweep on the fog axis.

Runs both search strategies over the same mock-SLAM evaluator and prints
the trial counts side by side, plus the located fail/pass bracket.

Usage: python scripts/fog_severity_sweep.py [--workdir DIR] [--step 5]
"""

import argparse
import sys
from pathlib import Path

from sal.boundary import boundary_search, sweep_boundary
from sal.config import BoundaryConfig, PerturbationSpec
from sal.datasets.synthetic import SyntheticSpec, generate_synthetic_sequence
from sal.metrics import ate
from sal.perturb.base import BoundaryParamSpec
from sal.perturb.pipeline import perturb_sequence
from sal.slam.mock import mock_slam_run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="results/fog_sweep", type=Path)
    parser.add_argument("--step", type=float, default=5.0)
    parser.add_argument("--lower", type=float, default=4.0)
    parser.add_argument("--upper", type=float, default=128.0)
    parser.add_argument("--ate-fail", type=float, default=1.0)
    args = parser.parse_args()
    workdir = args.workdir.resolve()
    workdir.mkdir(parents=True, exist_ok=True)

    spec = SyntheticSpec(n_frames=12, width=160, height=120, depth_model=("constant", 2.0), seed=3)
    manifest, gt = generate_synthetic_sequence(spec, workdir / "data")

    def evaluate(visibility_m: float):
        pert = PerturbationSpec("fog_probe", "fog", {"visibility_m": float(visibility_m)})
        result = perturb_sequence(pert, manifest, workdir / f"probe_{visibility_m:g}", master_seed=0)
        outcome = mock_slam_run(result.manifest, gt, manifest.dataset_root, seed=11)
        if outcome.failed:
            print(f"   V={visibility_m:6.1f} m -> {outcome.status}")
            return None
        rmse = ate(gt, outcome.trajectory, align="none").rmse
        print(f"   V={visibility_m:6.1f} m -> ATE RMSE {rmse:.3f} m")
        return rmse

    cfg = BoundaryConfig("fog_probe", "visibility_m", args.lower, args.upper, args.step, 10, args.ate_fail)

    print("== bisection ==")
    result = boundary_search(cfg, BoundaryParamSpec(domain="integer"), evaluate)
    print(f"status: {result.status}, bracket fail {result.fail_value} / pass {result.pass_value}")

    print("\n== linear sweep (from the passing end) ==")
    sweep = sweep_boundary(args.lower, args.upper, args.step, evaluate, args.ate_fail,
                           from_upper=(result.orientation == "fail_low"))
    print(f"\nbisection trials: {len(result.trials)}   sweep trials: {len(sweep)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
