import stat

import numpy as np
import pytest

from sal.datasets.adapters import open_sequence
from sal.datasets.imaging import load_image, save_image
from sal.errors import PerturbationError
from sal.perturb.transport import (
    TransportParams,
    encoder_args,
    frame_drop_apply,
    frame_drop_plan,
    parse_bitrate,
    rewrite_metadata_rows,
    stub_scale_factor,
    transport_reencode,
)


# ---------------------------------------------------------------------------
# Bitrate handling


def test_parse_bitrate_units():
    assert parse_bitrate("0.3M") == pytest.approx(300_000.0)
    assert parse_bitrate("5M") == pytest.approx(5e6)
    assert parse_bitrate("800k") == pytest.approx(800_000.0)
    assert parse_bitrate(250_000) == pytest.approx(250_000.0)


def test_parse_bitrate_rejects_garbage():
    with pytest.raises(PerturbationError):
        parse_bitrate("fast")
    with pytest.raises(PerturbationError):
        parse_bitrate("-1M")


def test_transport_params_validated():
    with pytest.raises(PerturbationError, match="vbv_buffer"):
        TransportParams("1M", "1M", "0M")


def test_encoder_invoked_with_exact_rate_flags():
    params = TransportParams("0.3M", "0.3M", "0.6M", frame_rate_hz=20.0)
    argv = encoder_args("in/%08d.png", "out.mp4", params)
    assert argv[argv.index("-b:v") + 1] == "0.3M"
    assert argv[argv.index("-maxrate") + 1] == "0.3M"
    assert argv[argv.index("-bufsize") + 1] == "0.6M"
    assert argv[argv.index("-c:v") + 1] == "libx264"
    assert argv[argv.index("-pix_fmt") + 1] == "yuv420p"
    assert argv[argv.index("-preset") + 1] == "medium"
    assert argv[argv.index("-framerate") + 1] == "20"


def test_stub_scale_clamp():
    assert stub_scale_factor(8e6) == 1.0
    assert stub_scale_factor(32e6) == 1.0
    assert stub_scale_factor(2e6) == pytest.approx(0.5)
    assert stub_scale_factor(1.0) == pytest.approx(0.1)


def _write_frames(tmp_path, n=4, size=(48, 64)):
    files = []
    rng = np.random.default_rng(0)
    for i in range(n):
        img = rng.random((*size, 3)).astype(np.float32)
        path = tmp_path / f"{i:06d}.png"
        save_image(path, img)
        files.append(path)
    return files


def test_stub_identity_at_high_bitrate(tmp_path):
    files = _write_frames(tmp_path)
    before = [p.read_bytes() for p in files]
    transport_reencode(files, TransportParams("9M", "9M", "18M"), mode="stub")
    after = [p.read_bytes() for p in files]
    assert before == after


def test_stub_degrades_at_low_bitrate(tmp_path):
    files = _write_frames(tmp_path)
    before = [load_image(p) for p in files]
    log = []
    transport_reencode(files, TransportParams("0.3M", "0.3M", "0.6M"), mode="stub", log=log)
    after = [load_image(p) for p in files]
    assert len(files) == len(after)
    assert any("non-physical" in line for line in log)
    assert all(np.abs(a - b).max() > 1e-3 for a, b in zip(before, after))


def test_external_mode_without_binary_errors(tmp_path, monkeypatch):
    monkeypatch.delenv("SAL_ENCODER_PATH", raising=False)
    monkeypatch.setenv("PATH", str(tmp_path))  # nothing on PATH
    files = _write_frames(tmp_path)
    with pytest.raises(PerturbationError, match="encoder"):
        transport_reencode(files, TransportParams("1M", "1M", "2M"), mode="external")


def test_external_encoder_nonzero_exit_captured(tmp_path, monkeypatch):
    fake = tmp_path / "fake_encoder.sh"
    fake.write_text("#!/bin/sh\necho boom >&2\nexit 3\n")
    fake.chmod(fake.stat().st_mode | stat.S_IEXEC)
    monkeypatch.setenv("SAL_ENCODER_PATH", str(fake))
    files = _write_frames(tmp_path / "frames")
    with pytest.raises(PerturbationError, match="boom"):
        transport_reencode(files, TransportParams("1M", "1M", "2M"), mode="external")


# ---------------------------------------------------------------------------
# Frame drop plans


def test_periodic_plan_definition():
    plan = frame_drop_plan(10, "periodic", 3, seed=0)
    assert plan.dropped == (2, 5, 8)
    assert len(plan.kept) == 7


def test_periodic_kept_count_exact():
    for n in (10, 17, 100):
        for period in (2, 3, 4, 7):
            plan = frame_drop_plan(n, "periodic", period, seed=0)
            assert len(plan.kept) == n - n // period


def test_random_rate_zero_keeps_all():
    plan = frame_drop_plan(50, "random", 0, seed=1)
    assert plan.kept == tuple(range(50))


def test_random_plan_reproducible_and_within_binomial_bounds():
    plan = frame_drop_plan(1000, "random", 30, seed=123)
    again = frame_drop_plan(1000, "random", 30, seed=123)
    assert plan.kept == again.kept
    assert 650 <= len(plan.kept) <= 750
    assert plan.kept[0] == 0  # frame 0 always kept
    other = frame_drop_plan(1000, "random", 30, seed=124)
    assert other.kept != plan.kept


def test_plan_validation():
    with pytest.raises(PerturbationError, match="100"):
        frame_drop_plan(10, "random", 100, seed=0)
    with pytest.raises(PerturbationError, match="period"):
        frame_drop_plan(10, "periodic", 1, seed=0)
    with pytest.raises(PerturbationError):
        frame_drop_plan(1, "periodic", 2, seed=0)


# ---------------------------------------------------------------------------
# Frame drop application


def _make_euroc(root, n=10):
    seq = root / "V1_01"
    rows = ["#timestamp [ns],filename"]
    for i in range(n):
        ts = 1_000_000_000 + i * 50_000_000
        name = f"{ts}.png"
        save_image(seq / "mav0" / "cam0" / "data" / name, np.full((24, 32, 3), 0.5, np.float32))
        rows.append(f"{ts},{name}")
    (seq / "mav0" / "cam0" / "data.csv").write_text("\n".join(rows) + "\n")
    return open_sequence("euroc", root, "V1_01")


def test_frame_drop_euroc_metadata_rewritten(tmp_path):
    manifest = _make_euroc(tmp_path / "src", n=10)
    plan = frame_drop_plan(10, "random", 30, seed=5)
    out = frame_drop_apply(manifest, plan, tmp_path / "dst")
    csv = (tmp_path / "dst" / "V1_01" / "mav0" / "cam0" / "data.csv").read_text().splitlines()
    assert csv[0].startswith("#")  # header preserved
    assert len(csv) == len(plan.kept) + 1
    assert len(out.frames) == len(plan.kept)
    # original timestamps survive
    src_stamps = [manifest.frames[i].timestamp for i in plan.kept]
    assert [f.timestamp for f in out.frames] == src_stamps


def test_frame_drop_periodic_preserves_filenames(tmp_path):
    manifest = _make_euroc(tmp_path / "src", n=10)
    plan = frame_drop_plan(10, "periodic", 2, seed=0)
    out = frame_drop_apply(manifest, plan, tmp_path / "dst")
    assert plan.kept == (0, 2, 4, 6, 8)
    kept_names = sorted(p.name for p in (tmp_path / "dst" / "V1_01" / "mav0" / "cam0" / "data").glob("*.png"))
    expected = sorted(manifest.frames[i].images["mono"].name for i in plan.kept)
    assert kept_names == expected
    assert [f.index for f in out.frames] == list(range(5))


def test_frame_drop_kitti_images_only(tmp_path):
    seq = tmp_path / "src" / "sequences" / "00"
    for i in range(6):
        save_image(seq / "image_2" / f"{i:06d}.png", np.full((24, 32, 3), 0.5, np.float32))
    manifest = open_sequence("kitti", tmp_path / "src", "00")
    plan = frame_drop_plan(6, "periodic", 3, seed=0)
    out = frame_drop_apply(manifest, plan, tmp_path / "dst")
    names = sorted(p.name for p in (tmp_path / "dst" / "sequences" / "00" / "image_2").glob("*.png"))
    assert names == ["000000.png", "000001.png", "000003.png", "000004.png"]
    assert out.metadata_files == ()


def test_rewrite_metadata_rows_keeps_comments():
    text = "#header\n1,a.png\n2,b.png\n3,c.png\n"
    out = rewrite_metadata_rows(text, {"b.png"})
    assert out == "#header\n1,a.png\n3,c.png\n"
