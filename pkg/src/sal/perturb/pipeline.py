"""Dataset-to-dataset perturbation pipeline.

For each configured spec, writes a perturbed copy of the source sequence
mirroring its on-disk layout exactly (same relative image paths) under
    <output_base>/<experiment>/perturbed/<spec name>/
so SLAM wrappers can consume perturbed data unchanged. Sequence-level
effects (re-encoding, frame drop) run after all per-frame effects.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

from ..config import ExperimentConfig, PerturbationSpec
from ..datasets.adapters import load_frame, open_sequence
from ..datasets.depth import ChainDepthProvider, NativeDepthProvider
from ..datasets.imaging import save_image
from ..datasets.manifest import SequenceManifest
from .base import PerturbationContext, instantiate
from . import weather, camera, transport  # noqa: F401  (register modules)


@dataclass
class PerturbedSequence:
    name: str
    dataset_root: Path
    sequence_dir: Path
    manifest: SequenceManifest
    log: tuple = ()


def spec_fingerprint(spec: PerturbationSpec, manifest: SequenceManifest, master_seed: int) -> str:
    """Stable content hash used for idempotent regeneration checks."""
    def spec_node(s: PerturbationSpec):
        return {
            "name": s.name,
            "type": s.type,
            "parameters": {k: s.parameters[k] for k in sorted(s.parameters)},
            "modules": [spec_node(c) for c in s.modules],
        }

    payload = {
        "spec": spec_node(spec),
        "master_seed": master_seed,
        "frames": [str(f.images[manifest.reference_stream].name) for f in manifest.frames],
        "streams": list(manifest.streams),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _state_file(output_root: Path) -> Path:
    return output_root / ".sal_perturb.json"


def is_up_to_date(spec, manifest, master_seed, output_root: Path) -> bool:
    state = _state_file(output_root)
    if not state.exists():
        return False
    try:
        recorded = json.loads(state.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return recorded.get("fingerprint") == spec_fingerprint(spec, manifest, master_seed)


def _stale_referenced_names(metadata_path: Path, kept_names: set) -> set:
    """Image names referenced by a metadata file but absent from the manifest."""
    referenced = set()
    for line in metadata_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        for token in line.replace(",", " ").split():
            if token.endswith(".png") or token.endswith(".jpg"):
                referenced.add(Path(token).name)
    return referenced - kept_names


def _copy_sidecars(manifest: SequenceManifest, output_root: Path, kept_names: set) -> None:
    """Mirror every non-stream file; rewrite metadata to manifest frames.

    Stream image directories are written by the per-frame loop, so they are
    excluded here. Metadata sidecars (e.g. timestamp-image listings) are
    filtered to the frames actually present in the manifest so a truncated
    manifest yields a self-consistent output sequence.
    """
    stream_dirs = {manifest.frames[0].images[s].parent.resolve() for s in manifest.streams}
    metadata = {p.resolve() for p in manifest.metadata_files}

    for path in sorted(manifest.sequence_dir.rglob("*")):
        if not path.is_file() or path.parent.resolve() in stream_dirs:
            continue
        rel = path.relative_to(manifest.dataset_root)
        dst = output_root / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        if path.resolve() in metadata:
            stale = _stale_referenced_names(path, kept_names)
            dst.write_text(transport.rewrite_metadata_rows(path.read_text(), stale))
        else:
            shutil.copyfile(path, dst)


def perturb_sequence(
    spec: PerturbationSpec,
    manifest: SequenceManifest,
    output_root: Path,
    master_seed: int,
    depth_chain: ChainDepthProvider | None = None,
    scratch_dir: Path | None = None,
) -> PerturbedSequence:
    """Write one perturbed copy of the sequence and return its descriptor."""
    output_root = Path(output_root)
    output_root.mkdir(parents=True, exist_ok=True)
    scratch = scratch_dir or (output_root / ".scratch")
    scratch.mkdir(parents=True, exist_ok=True)
    chain = depth_chain or ChainDepthProvider([NativeDepthProvider()])

    ctx = PerturbationContext(
        manifest=manifest,
        dataset_dir=manifest.dataset_root,
        n_frames=len(manifest.frames),
        scratch_dir=scratch,
        master_seed=master_seed,
        seed_scope=spec.name,
    )
    instance = instantiate(spec, ctx)
    log: list = []

    kept_names = {f.images[s].name for f in manifest.frames for s in manifest.streams}
    _copy_sidecars(manifest, output_root, kept_names)

    needs_depth = instance.requires_depth
    for frame in manifest.frames:
        depth = chain.depth_for(manifest, frame.index) if needs_depth else None
        for stream in manifest.streams:
            image = load_frame(manifest, frame.index, stream)
            out = instance.apply_frame(image, depth, frame.index, stream)
            save_image(output_root / manifest.image_relpath(frame.index, stream), out)

    out_manifest = open_sequence(
        manifest.dataset_type,
        output_root,
        manifest.sequence_id,
        load_stereo=len(manifest.streams) > 1,
    )
    for module in instance.sequence_modules:
        # Sequence-level effects always run after per-frame effects,
        # whatever their position in a composite.
        log.append(f"sequence-level pass: {module.module_name}")
        out_manifest = module.apply_sequence(out_manifest, log)
    instance.cleanup()

    _state_file(output_root).write_text(
        json.dumps({"fingerprint": spec_fingerprint(spec, manifest, master_seed), "name": spec.name})
    )
    return PerturbedSequence(
        name=spec.name,
        dataset_root=output_root,
        sequence_dir=out_manifest.sequence_dir,
        manifest=out_manifest,
        log=tuple(log),
    )


def perturbed_output_root(config: ExperimentConfig, spec_name: str) -> Path:
    return Path(config.output_base_dir) / config.name / "perturbed" / spec_name


def run_perturbation_pipeline(
    config: ExperimentConfig,
    manifest: SequenceManifest,
    depth_chain: ChainDepthProvider | None = None,
    force: bool = False,
) -> list[PerturbedSequence]:
    """Run every configured spec; skips up-to-date outputs unless forced."""
    results = []
    for spec in config.perturbations:
        output_root = perturbed_output_root(config, spec.name)
        if not force and is_up_to_date(spec, manifest, config.master_seed, output_root):
            out_manifest = open_sequence(
                manifest.dataset_type,
                output_root,
                manifest.sequence_id,
                load_stereo=len(manifest.streams) > 1,
            )
            results.append(
                PerturbedSequence(
                    name=spec.name,
                    dataset_root=output_root,
                    sequence_dir=out_manifest.sequence_dir,
                    manifest=out_manifest,
                    log=("up-to-date",),
                )
            )
            continue
        if output_root.exists():
            shutil.rmtree(output_root)
        results.append(
            perturb_sequence(spec, manifest, output_root, config.master_seed, depth_chain)
        )
    return results
