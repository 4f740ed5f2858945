import numpy as np
import pytest

from sal.config import PerturbationSpec, parse_experiment_config
from sal.datasets.adapters import load_frame, open_sequence
from sal.datasets.manifest import DepthMap
from sal.errors import PerturbationError
from sal.perturb import (
    instantiate,
    perturb_sequence,
    run_perturbation_pipeline,
    searchable_params,
)
from sal.perturb.base import resolve_searchable, override_spec_parameter

from conftest import checkerboard_image


def test_instantiate_fog_derives_extinction(make_module):
    inst = make_module("fog", {"visibility_m": 100})
    assert inst.frame_modules[0].beta == pytest.approx(0.03912)


def test_instantiate_validation_error_names_parameter(make_module):
    with pytest.raises(PerturbationError, match="intensity must be > 0"):
        make_module("rain", {"intensity": -5})


def test_instantiate_unknown_type(module_ctx):
    spec = PerturbationSpec("x", "composite", {}, ())
    with pytest.raises(PerturbationError, match="at least one child"):
        instantiate(spec, module_ctx())


def test_composite_children_in_listed_order(module_ctx):
    spec = PerturbationSpec(
        "combo",
        "composite",
        {},
        (
            PerturbationSpec("lens_soiling", "lens_soiling", {"num_particles": 5}),
            PerturbationSpec("rain", "rain", {"intensity": 30}),
        ),
    )
    inst = instantiate(spec, module_ctx(scope="combo"))
    assert [m.module_name for m in inst.frame_modules] == ["lens_soiling", "rain"]


def test_composite_application_equals_sequential(module_ctx):
    child_a = PerturbationSpec("night", "night", {"noise_sigma": 0.0})
    child_b = PerturbationSpec("fog", "fog", {"visibility_m": 40.0, "fallback_depth_m": 8.0})
    combo = PerturbationSpec("combo", "composite", {}, (child_a, child_b))
    inst = instantiate(combo, module_ctx(scope="combo"))

    ctx_a = module_ctx(scope="combo/night")
    ctx_b = module_ctx(scope="combo/fog")
    alone_a = instantiate(child_a, ctx_a)
    alone_b = instantiate(child_b, ctx_b)

    img = checkerboard_image(64, 48, 8)
    depth = DepthMap.constant(8.0, 48, 64)
    combined = inst.apply_frame(img, depth, 2, "mono")
    sequential = alone_b.apply_frame(alone_a.apply_frame(img, depth, 2, "mono"), depth, 2, "mono")
    np.testing.assert_array_equal(combined, sequential)


def test_single_child_composite_equals_child(module_ctx):
    child = PerturbationSpec("night", "night", {})
    combo = PerturbationSpec("combo", "composite", {}, (child,))
    img = checkerboard_image(64, 48, 8)
    a = instantiate(combo, module_ctx(scope="combo")).apply_frame(img, None, 0, "mono")
    b = instantiate(child, module_ctx(scope="combo/night")).apply_frame(img, None, 0, "mono")
    np.testing.assert_array_equal(a, b)


def test_sequence_level_children_split_out(module_ctx):
    spec = PerturbationSpec(
        "mixed",
        "composite",
        {},
        (
            PerturbationSpec("drop", "frame_drop", {"mode": "periodic", "period": 3}),
            PerturbationSpec("night", "night", {}),
        ),
    )
    inst = instantiate(spec, module_ctx(scope="mixed"))
    assert [m.module_name for m in inst.frame_modules] == ["night"]
    assert [m.module_name for m in inst.sequence_modules] == ["frame_drop"]


def test_apply_after_cleanup_rejected(make_module):
    inst = make_module("night", {})
    inst.cleanup()
    with pytest.raises(PerturbationError, match="cleanup"):
        inst.apply_frame(checkerboard_image(64, 48, 8), None, 0, "mono")


def test_determinism_same_inputs_byte_identical(make_module):
    img = checkerboard_image(64, 48, 8)
    a = make_module("rain", {"intensity": 80}).apply_frame(img, DepthMap.constant(8, 48, 64), 3, "mono")
    b = make_module("rain", {"intensity": 80}).apply_frame(img, DepthMap.constant(8, 48, 64), 3, "mono")
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# Searchable parameter declarations


def test_searchable_params_declarations():
    assert searchable_params("fog")["visibility_m"].domain == "integer"
    assert searchable_params("rain")["intensity"].domain == "integer"
    assert searchable_params("frame_drop")["drop_rate_percent"].domain == "integer"
    assert searchable_params("motion_blur")["speed_kmh"].domain == "real"
    assert searchable_params("motion_blur")["exposure_ms"].domain == "real"
    assert "target_bitrate" in searchable_params("network_degradation")


def test_network_canonicalize_bitrate():
    spec = searchable_params("network_degradation")["target_bitrate"]
    assert spec.to_module_value(5) == "5M"
    assert spec.to_module_value(5.9) == "5M"


def test_fog_visibility_no_canonicalize():
    spec = searchable_params("fog")["visibility_m"]
    assert spec.to_module_value(24) == 24


def test_unknown_searchable_key_absent():
    assert "wind_speed" not in searchable_params("fog")


def test_resolve_searchable_in_composite():
    combo = PerturbationSpec(
        "night_fog",
        "composite",
        {},
        (
            PerturbationSpec("night", "night", {}),
            PerturbationSpec("fog", "fog", {"visibility_m": 100.0}),
        ),
    )
    sub, param = resolve_searchable(combo, "visibility_m")
    assert sub.type == "fog"
    assert param.domain == "integer"
    overridden = override_spec_parameter(combo, sub, "visibility_m", 24)
    assert overridden.modules[1].parameters["visibility_m"] == 24
    assert combo.modules[1].parameters["visibility_m"] == 100.0  # untouched


def test_resolve_searchable_missing():
    spec = PerturbationSpec("night", "night", {})
    with pytest.raises(PerturbationError, match="SEARCHABLE_PARAMS"):
        resolve_searchable(spec, "exposure_scale")


# ---------------------------------------------------------------------------
# Pipeline runs


@pytest.fixture
def pipeline_env(tmp_path, synthetic_sequence):
    manifest, gt = synthetic_sequence
    config = parse_experiment_config(
        {
            "experiment": {"name": "exp", "master_seed": 7},
            "dataset": {"type": "kitti", "root": str(manifest.dataset_root), "sequence": "00"},
            "perturbations": [
                {"name": "fog_example", "type": "fog", "parameters": {"visibility_m": 50.0}},
                {
                    "name": "soiling_rain",
                    "type": "composite",
                    "parameters": {
                        "modules": [
                            {"type": "lens_soiling", "parameters": {"num_particles": 20}},
                            {"type": "rain", "parameters": {"intensity": 40}},
                        ]
                    },
                },
            ],
            "output": {"base_dir": str(tmp_path / "out")},
        }
    )
    return config, manifest


def test_pipeline_writes_one_sequence_per_spec(pipeline_env):
    config, manifest = pipeline_env
    results = run_perturbation_pipeline(config, manifest)
    assert [r.name for r in results] == ["fog_example", "soiling_rain"]
    for result in results:
        assert len(result.manifest.frames) == len(manifest.frames)
        mirror = result.dataset_root / "sequences" / "00" / "image_2"
        assert sorted(p.name for p in mirror.glob("*.png")) == [
            f.images["mono"].name for f in manifest.frames
        ]
        # layout mirrored: reopening through the adapter works unchanged
        reopened = open_sequence("kitti", result.dataset_root, "00")
        assert len(reopened.frames) == len(manifest.frames)
        assert reopened.ground_truth is not None


def test_pipeline_output_differs_from_source(pipeline_env):
    config, manifest = pipeline_env
    results = run_perturbation_pipeline(config, manifest)
    src = load_frame(manifest, 0)
    for result in results:
        out = load_frame(result.manifest, 0)
        assert np.abs(out - src).max() > 1e-3


def test_pipeline_idempotent_until_forced(pipeline_env):
    config, manifest = pipeline_env
    first = run_perturbation_pipeline(config, manifest)
    image = first[0].manifest.frames[0].images["mono"]
    before = image.stat().st_mtime_ns
    second = run_perturbation_pipeline(config, manifest)
    assert all("up-to-date" in r.log for r in second)
    assert image.stat().st_mtime_ns == before
    forced = run_perturbation_pipeline(config, manifest, force=True)
    assert all("up-to-date" not in r.log for r in forced)


def test_pipeline_schedule_independence(pipeline_env, tmp_path):
    # Reversed frame order produces byte-identical outputs.
    config, manifest = pipeline_env
    spec = config.perturbations[1]
    forward = perturb_sequence(spec, manifest, tmp_path / "fwd", config.master_seed)

    from sal.datasets.imaging import save_image
    from sal.perturb.base import PerturbationContext, instantiate as make_instance
    from sal.datasets.depth import ChainDepthProvider, NativeDepthProvider

    ctx = PerturbationContext(
        manifest=manifest,
        dataset_dir=manifest.dataset_root,
        n_frames=len(manifest.frames),
        scratch_dir=tmp_path / "scratch",
        master_seed=config.master_seed,
        seed_scope=spec.name,
    )
    inst = make_instance(spec, ctx)
    chain = ChainDepthProvider([NativeDepthProvider()])
    outputs = {}
    for frame in reversed(manifest.frames):
        depth = chain.depth_for(manifest, frame.index)
        img = load_frame(manifest, frame.index, "mono")
        outputs[frame.index] = inst.apply_frame(img, depth, frame.index, "mono")
    for frame in manifest.frames:
        save_path = tmp_path / "probe.png"
        save_image(save_path, outputs[frame.index])
        assert save_path.read_bytes() == forward.manifest.frames[frame.index].images["mono"].read_bytes()


def test_pipeline_stereo_mirrors_both_streams(tmp_path):
    from sal.datasets.synthetic import SyntheticSpec, generate_synthetic_sequence

    spec = SyntheticSpec(n_frames=3, width=64, height=48, stereo=True, depth_model=("constant", 5.0))
    manifest, _ = generate_synthetic_sequence(spec, tmp_path / "src")
    manifest = open_sequence("kitti", tmp_path / "src", "00", load_stereo=True)
    pert = PerturbationSpec("fog", "fog", {"visibility_m": 30.0})
    result = perturb_sequence(pert, manifest, tmp_path / "dst", master_seed=0)
    for sub in ("image_2", "image_3"):
        files = list((tmp_path / "dst" / "sequences" / "00" / sub).glob("*.png"))
        assert len(files) == 3


def test_pipeline_sequence_level_frame_drop(pipeline_env, tmp_path, synthetic_sequence):
    manifest, _ = synthetic_sequence
    spec = PerturbationSpec(
        "drop", "composite", {},
        (
            PerturbationSpec("night", "night", {}),
            PerturbationSpec("drop", "frame_drop", {"mode": "periodic", "period": 5}),
        ),
    )
    result = perturb_sequence(spec, manifest, tmp_path / "dropped", master_seed=0)
    n = len(manifest.frames)
    assert len(result.manifest.frames) == n - n // 5
    assert any("sequence-level" in line for line in result.log)


def test_pipeline_max_frames_limits_outputs(tmp_path, synthetic_sequence):
    manifest, _ = synthetic_sequence
    truncated = open_sequence("kitti", manifest.dataset_root, "00", max_frames=4)
    spec = PerturbationSpec("fog", "fog", {"visibility_m": 60.0})
    result = perturb_sequence(spec, truncated, tmp_path / "short", master_seed=0)
    assert len(result.manifest.frames) == 4
    images = list((tmp_path / "short" / "sequences" / "00" / "image_2").glob("*.png"))
    assert len(images) == 4


def test_pipeline_tum_layout_mirrored(tmp_path):
    import numpy as np
    from sal.datasets.imaging import save_depth_png, save_image

    seq = tmp_path / "src" / "fr1_xyz"
    stamps = [100.0 + 0.0333 * i for i in range(4)]
    rgb_rows = ["# color images"]
    for t in stamps:
        save_image(seq / "rgb" / f"{t:.6f}.png", checkerboard_image(64, 48, 8))
        save_depth_png(seq / "depth" / f"{t:.6f}.png", np.full((48, 64), 3.0), scale=5000.0)
        rgb_rows.append(f"{t:.6f} rgb/{t:.6f}.png")
    (seq / "rgb.txt").write_text("\n".join(rgb_rows) + "\n")
    (seq / "groundtruth.txt").write_text(
        "".join(f"{t:.6f} 0 0 {i * 0.1} 0 0 0 1\n" for i, t in enumerate(stamps))
    )
    manifest = open_sequence("tum", tmp_path / "src", "fr1_xyz")
    spec = PerturbationSpec("fog", "fog", {"visibility_m": 20.0})
    result = perturb_sequence(spec, manifest, tmp_path / "dst", master_seed=0)

    out_seq = tmp_path / "dst" / "fr1_xyz"
    assert len(list((out_seq / "rgb").glob("*.png"))) == 4
    assert len(list((out_seq / "depth").glob("*.png"))) == 4  # depth carried along
    assert (out_seq / "groundtruth.txt").exists()
    assert (out_seq / "rgb.txt").read_text().count("rgb/") == 4
    reopened = open_sequence("tum", tmp_path / "dst", "fr1_xyz")
    assert all(f.depth is not None for f in reopened.frames)
    assert len(result.manifest.frames) == 4


def test_pipeline_euroc_frame_drop_rewrites_csv(tmp_path):
    import numpy as np
    from sal.datasets.imaging import save_image

    seq = tmp_path / "src" / "V1_01"
    rows = ["#timestamp [ns],filename"]
    for i in range(10):
        ts = 10_000_000_000 + i * 50_000_000
        save_image(seq / "mav0" / "cam0" / "data" / f"{ts}.png", checkerboard_image(64, 48, 8))
        rows.append(f"{ts},{ts}.png")
    (seq / "mav0" / "cam0" / "data.csv").write_text("\n".join(rows) + "\n")
    manifest = open_sequence("euroc", tmp_path / "src", "V1_01")

    spec = PerturbationSpec(
        "drop", "frame_drop", {"mode": "periodic", "period": 2},
    )
    result = perturb_sequence(spec, manifest, tmp_path / "dst", master_seed=0)
    assert len(result.manifest.frames) == 5
    csv_lines = (tmp_path / "dst" / "V1_01" / "mav0" / "cam0" / "data.csv").read_text().splitlines()
    assert len(csv_lines) == 5 + 1
    reopened = open_sequence("euroc", tmp_path / "dst", "V1_01")
    assert len(reopened.frames) == 5


def test_per_stream_seeding_decorrelates_lens_effects(module_ctx):
    spec = PerturbationSpec("soil", "lens_soiling", {"num_particles": 10})
    inst = instantiate(spec, module_ctx(streams=("left", "right"), scope="soil"))
    img = checkerboard_image(64, 48, 8)
    left = inst.apply_frame(img, None, 0, "left")
    right = inst.apply_frame(img, None, 0, "right")
    assert np.abs(left - right).max() > 1e-4
