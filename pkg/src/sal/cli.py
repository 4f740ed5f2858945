"""Command-line pipelines: perturb, slam-eval, odometry, boundary.

    sal <subcommand> --config experiment.yaml [--output-dir DIR] [--runs N]
        [--seed S] [--wrapper id_or_spec.yaml]... [--force] [--dry-run]

Exit codes: 0 success, 1 runtime error, 2 config error, 3 boundary not
found (both endpoints pass, or everything fails).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from .boundary import boundary_search, make_production_evaluator, write_boundary_result
from .config import ExperimentConfig, load_experiment_config
from .errors import ConfigError, DegenerateGeometryError, SalError
from .datasets.adapters import open_sequence
from .datasets.depth import provider_chain_for
from .metrics import AteStats, aggregate_runs, ate, rpe
from .perturb.pipeline import (
    is_up_to_date,
    perturb_sequence,
    perturbed_output_root,
    run_perturbation_pipeline,
)
from .reports import RunEntry, RunRecord, emit_run_reports, emit_summary
from .seeding import derive_frame_seed
from .slam.mock import MockSlamInputs
from .slam.wrappers import execute_slam, load_wrapper_spec, mock_wrapper_spec, resolve_settings, stage_sequence
from .tracking import TrackerParams, compare_tracking, load_external_tracks, run_tracking, stats_from_external_tracks
from .trajectory import Trajectory, load_trajectory_file

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_NO_BOUNDARY = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sal", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--output-dir", default=None, help="override output base dir")
        p.add_argument("--runs", type=int, default=None, help="override run count")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--force", action="store_true", help="regenerate existing outputs")
        p.add_argument("--dry-run", action="store_true", help="print planned actions, touch nothing")

    p = sub.add_parser("perturb", help="generate perturbed sequences")
    common(p)

    p = sub.add_parser("slam-eval", help="run SLAM on clean + perturbed data and evaluate")
    common(p)
    p.add_argument("--wrapper", action="append", default=None, help="wrapper id ('mock') or spec YAML path; repeatable")
    p.add_argument("--alignment", choices=["auto", "none", "se3", "sim3"], default="auto")
    p.add_argument("--auto-perturb", action="store_true", help="generate missing perturbed data first")

    p = sub.add_parser("odometry", help="feature-tracking diagnostics on clean + perturbed data")
    common(p)
    p.add_argument("--tracks", action="append", default=None, metavar="SETTING=PATH",
                   help="external tracks JSON for a setting ('clean' or a perturbation name)")
    p.add_argument("--grad-threshold", type=float, default=TrackerParams.grad_threshold)
    p.add_argument("--max-features", type=int, default=TrackerParams.max_features)

    p = sub.add_parser("boundary", help="bisect the failure boundary of the target perturbation")
    common(p)
    p.add_argument("--wrapper", action="append", default=None, help="wrapper for the probes (default mock)")
    p.add_argument("--alignment", choices=["auto", "none", "se3", "sim3"], default="auto")
    return parser


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.output_dir is not None:
        updates["output_base_dir"] = Path(args.output_dir)
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        updates["runs"] = args.runs
    if args.seed is not None:
        updates["master_seed"] = args.seed
    return dataclasses.replace(config, **updates) if updates else config


def _open_manifest(config: ExperimentConfig):
    manifest = open_sequence(
        config.dataset.type,
        config.dataset.root,
        config.dataset.sequence,
        max_frames=config.dataset.max_frames,
        load_stereo=config.dataset.load_stereo,
    )
    return manifest, provider_chain_for(config.dataset)


def _experiment_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_base_dir) / config.name


def _lock(config: ExperimentConfig) -> FileLock:
    # Single pipeline instance per output root; fail fast when held.
    root = _experiment_dir(config)
    root.mkdir(parents=True, exist_ok=True)
    return FileLock(root / ".sal.lock", timeout=0.5)


def _resolve_wrappers(names):
    wrappers = []
    for name in names or ["mock"]:
        if name == "mock":
            wrappers.append(mock_wrapper_spec())
        else:
            wrappers.append(load_wrapper_spec(name))
    return wrappers


def _mock_seed(config: ExperimentConfig, run_index: int) -> int:
    # One mock noise draw per run, shared by every setting in that run:
    # the mock's internal randomness must not depend on which data it sees.
    return derive_frame_seed(config.master_seed, "mock_slam", run_index, 0)


def _auto_alignment(manifest) -> str:
    # Stereo and RGB-D runs are metric; monocular runs are scale-ambiguous.
    if len(manifest.streams) > 1 or manifest.dataset_type == "tum":
        return "se3"
    return "sim3"


def _ate_with_fallback(reference: Trajectory, estimate: Trajectory, mode: str) -> AteStats:
    try:
        return ate(reference, estimate, align=mode)
    except DegenerateGeometryError:
        return ate(reference, estimate, align="none")


def _require_perturbed(config: ExperimentConfig, manifest):
    missing = [
        spec.name
        for spec in config.perturbations
        if not is_up_to_date(spec, manifest, config.master_seed, perturbed_output_root(config, spec.name))
    ]
    return missing


# ---------------------------------------------------------------------------
# perturb


def cmd_perturb(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    manifest, depth_chain = _open_manifest(config)
    if args.dry_run:
        print(f"[dry-run] experiment '{config.name}': {len(manifest.frames)} frames, streams {manifest.streams}")
        for spec in config.perturbations:
            print(f"[dry-run] would write {perturbed_output_root(config, spec.name)}")
        return EXIT_OK
    with _lock(config):
        results = run_perturbation_pipeline(config, manifest, depth_chain, force=args.force)
    for result in results:
        state = "up-to-date" if "up-to-date" in result.log else "generated"
        print(f"{result.name}: {state} ({len(result.manifest.frames)} frames) -> {result.dataset_root}")
        for line in result.log:
            if line != "up-to-date":
                print(f"  {line}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# slam-eval


def _run_setting(config, wrapper, manifest, setting_name, sequence_dir, run_index, work_dir, gt, align_mode):
    """Execute one wrapper on one sequence and compute its metrics."""
    run_dir = work_dir / f"run_{run_index}" / setting_name
    staged = stage_sequence(wrapper, sequence_dir, run_dir)
    settings = None
    if wrapper.settings_rules:
        settings = resolve_settings(wrapper, config.dataset.type, config.dataset.sequence)
    mock_inputs = None
    if wrapper.algorithm == "mock":
        mock_inputs = MockSlamInputs(manifest, gt, Path(config.dataset.root), _mock_seed(config, run_index))
    outcome = execute_slam(wrapper, staged, settings, run_index, run_dir, mock_inputs=mock_inputs)
    entry = RunEntry(setting_name, outcome)
    if not outcome.failed:
        entry.ate = _ate_with_fallback(gt, outcome.trajectory, align_mode)
        try:
            entry.rpe = rpe(gt, outcome.trajectory, delta=1)
        except SalError:
            entry.rpe = None
    return entry


def cmd_slam_eval(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    manifest, depth_chain = _open_manifest(config)
    wrappers = _resolve_wrappers(args.wrapper)

    if args.dry_run:
        for wrapper in wrappers:
            for run_index in range(1, config.runs + 1):
                print(f"[dry-run] {wrapper.algorithm} run {run_index}: baseline + "
                      + ", ".join(s.name for s in config.perturbations))
        return EXIT_OK

    if manifest.ground_truth is None:
        raise SalError("sequence has no ground-truth trajectory (groundtruth.txt); cannot evaluate ATE")
    gt = load_trajectory_file(manifest.ground_truth)

    with _lock(config):
        missing = _require_perturbed(config, manifest)
        if missing and not args.auto_perturb:
            raise SalError(
                f"perturbed data missing for {missing}; run 'sal perturb' first or pass --auto-perturb"
            )
        if missing:
            run_perturbation_pipeline(config, manifest, depth_chain, force=False)

        perturbed = {
            spec.name: open_sequence(
                manifest.dataset_type,
                perturbed_output_root(config, spec.name),
                manifest.sequence_id,
                load_stereo=len(manifest.streams) > 1,
            )
            for spec in config.perturbations
        }

        align_mode = _auto_alignment(manifest) if args.alignment == "auto" else args.alignment
        exp_dir = _experiment_dir(config)
        any_completed = False
        for wrapper in wrappers:
            algo_dir = exp_dir / "slam_results" / wrapper.algorithm
            work_dir = algo_dir / "work"
            level_rmses: dict[str, list] = {spec.name: [] for spec in config.perturbations}
            clean_rmses: list = []
            for run_index in range(1, config.runs + 1):
                baseline = _run_setting(
                    config, wrapper, manifest, "baseline", manifest.sequence_dir,
                    run_index, work_dir, gt, align_mode,
                )
                clean_rmses.append(baseline.rmse)
                record = RunRecord(run_index=run_index, baseline=baseline)
                for spec in config.perturbations:
                    pert_manifest = perturbed[spec.name]
                    entry = _run_setting(
                        config, wrapper, pert_manifest, spec.name, pert_manifest.sequence_dir,
                        run_index, work_dir, gt, align_mode,
                    )
                    record.perturbed.append(entry)
                    level_rmses[spec.name].append(entry.rmse)
                    status = f"rmse={entry.rmse:.4f}" if entry.rmse is not None else entry.outcome.status
                    print(f"{wrapper.algorithm} run {run_index} {spec.name}: {status}")
                any_completed = any_completed or not baseline.outcome.failed or any(
                    not e.outcome.failed for e in record.perturbed
                )
                emit_run_reports(algo_dir, record, gt, manifest.plot_plane)

            if any(r is not None for r in clean_rmses):
                report = aggregate_runs(
                    [(spec.name, level_rmses[spec.name]) for spec in config.perturbations],
                    clean_rmses,
                )
                emit_summary(algo_dir, config.name, wrapper.algorithm, report, config.runs)
                print(f"{wrapper.algorithm}: summary written to {algo_dir / 'metrics' / 'summary.json'}")
    return EXIT_OK if any_completed else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# odometry


def _survival_csv(path: Path, stats) -> None:
    lines = ["t,fraction"] + [f"{t},{frac:.6f}" for t, frac in stats.survival]
    path.write_text("\n".join(lines) + "\n")


def cmd_odometry(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    manifest, _ = _open_manifest(config)
    params = TrackerParams(grad_threshold=args.grad_threshold, max_features=args.max_features)
    external = {}
    for item in args.tracks or []:
        setting, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--tracks expects SETTING=PATH, got '{item}'")
        external[setting] = Path(path)

    if args.dry_run:
        settings = ["clean"] + [s.name for s in config.perturbations]
        for name in settings:
            source = "external tracks" if name in external else "built-in tracker"
            print(f"[dry-run] would analyze '{name}' with {source}")
        return EXIT_OK

    with _lock(config):
        missing = _require_perturbed(config, manifest)
        if missing:
            raise SalError(f"perturbed data missing for {missing}; run 'sal perturb' first")
        out_dir = _experiment_dir(config) / "odometry"
        out_dir.mkdir(parents=True, exist_ok=True)

        def stats_for(name, seq_manifest):
            if name in external:
                return stats_from_external_tracks(load_external_tracks(external[name]))
            return run_tracking(seq_manifest, params)

        clean_stats = stats_for("clean", manifest)
        results = [("clean", clean_stats)]
        for spec in config.perturbations:
            pert_manifest = open_sequence(
                manifest.dataset_type,
                perturbed_output_root(config, spec.name),
                manifest.sequence_id,
                load_stereo=len(manifest.streams) > 1,
            )
            results.append((spec.name, stats_for(spec.name, pert_manifest)))

        for name, stats in results:
            (out_dir / f"tracking_{name}.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
            _survival_csv(out_dir / f"survival_{name}.csv", stats)
            print(f"{name}: mean track length {stats.mean_track_length:.2f}, "
                  f"{stats.num_tracks} tracks"
                  + (" [matching failure]" if stats.matching_failure else ""))

        comparison = compare_tracking(clean_stats, results[1:])
        (out_dir / "comparison.json").write_text(json.dumps(comparison, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# boundary


def cmd_boundary(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    if config.boundary is None:
        raise ConfigError("config has no robustness_boundary block")
    manifest, depth_chain = _open_manifest(config)
    wrappers = _resolve_wrappers(args.wrapper)
    wrapper = wrappers[0]
    cfg = config.boundary

    if args.dry_run:
        print(f"[dry-run] boundary search on '{cfg.target_perturbation}.{cfg.parameter}' "
              f"in [{cfg.lower_bound}, {cfg.upper_bound}], tolerance {cfg.tolerance}, "
              f"ate_rmse_fail {cfg.ate_rmse_fail}, wrapper {wrapper.algorithm}")
        return EXIT_OK

    if manifest.ground_truth is None:
        raise SalError("sequence has no ground-truth trajectory (groundtruth.txt); cannot evaluate ATE")
    gt = load_trajectory_file(manifest.ground_truth)
    align_mode = _auto_alignment(manifest) if args.alignment == "auto" else args.alignment
    boundary_dir = _experiment_dir(config) / "boundary"

    def run_slam(probe_spec, probe_root: Path) -> float | None:
        result = perturb_sequence(probe_spec, manifest, probe_root, config.master_seed, depth_chain)
        run_dir = probe_root / "slam"
        staged = stage_sequence(wrapper, result.sequence_dir, run_dir)
        settings = None
        if wrapper.settings_rules:
            settings = resolve_settings(wrapper, config.dataset.type, config.dataset.sequence)
        mock_inputs = None
        if wrapper.algorithm == "mock":
            mock_inputs = MockSlamInputs(result.manifest, gt, Path(config.dataset.root), _mock_seed(config, 1))
        outcome = execute_slam(wrapper, staged, settings, 1, run_dir, mock_inputs=mock_inputs)
        if outcome.failed:
            return None
        return _ate_with_fallback(gt, outcome.trajectory, align_mode).rmse

    with _lock(config):
        evaluator, param_spec = make_production_evaluator(
            config, boundary_dir / "probes", run_slam
        )
        result = boundary_search(cfg, param_spec, evaluator)
        write_boundary_result(boundary_dir / "boundary_result.json", result, cfg)

    print(f"status: {result.status} (orientation: {result.orientation})")
    for trial in result.trials:
        ate_text = f"{trial.ate_rmse:.4f}" if trial.ate_rmse is not None else "x"
        print(f"  {cfg.parameter}={trial.value:g}  ate={ate_text}  {trial.classification}")
    if result.status in ("bracket_found", "max_iters_reached") and result.fail_value is not None:
        print(f"bracket: fail {result.fail_value:g} / pass {result.pass_value:g} "
              f"(+/- {cfg.tolerance:g} {cfg.parameter})")
        return EXIT_OK
    return EXIT_NO_BOUNDARY


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "perturb": cmd_perturb,
        "slam-eval": cmd_slam_eval,
        "odometry": cmd_odometry,
        "boundary": cmd_boundary,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Timeout:
        print("another pipeline instance holds the output lock", file=sys.stderr)
        return EXIT_RUNTIME
    except SalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
