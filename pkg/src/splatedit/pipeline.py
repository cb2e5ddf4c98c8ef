"""End-to-end session pipeline.

`run_pipeline` takes a scene file and an edit spec and produces a session
directory: edit targets are generated, the 2D masks are lifted to a Gaussian
region, the region is optimized toward the targets, and the trajectory is
distilled into an offset field. Everything a serving process needs lands on
disk; manifests are bitwise-deterministic for a fixed seed (wall-clock timings
go to a separate timings.json).

`run_eval` replays a finished session into a CSV report: per-control render
distances, offset norms and their rank correlation with the control, sharpness,
region IoU against the oracle, stage timings, and the two endpoint frames a
server would produce at u=0 and u=1.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from .core import (Camera, RegionMask, Scene, SceneError, decode_scene,
                   encode_scene, orbit_camera, orbit_rig)
from .edits import EditSpec, build_view_set
from .offset_field import (OffsetField, OffsetFieldConfig, compose_regions,
                           field_offsets, train_offset_field)
from .progressive import (ProgressiveConfig, Trajectory, reports_to_csv,
                          run_progressive_edit)
from .region import REGION_THRESHOLD, recover_region
from .renderer import image_to_png, laplacian_response, render

MANIFEST_VERSION = 1

RIG_DEFAULTS = {
    "azimuth_steps": 8,
    "elevations_deg": [-15.0, 15.0],
    "radius": None,  # None: derived from scene bounds
    "fov_deg": 45.0,
    "width": 64,
    "height": 64,
}


class PipelineError(RuntimeError):
    """A pipeline stage failed; `stage` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def resolve_rig(scene: Scene, rig_cfg: dict) -> dict:
    """Fill rig defaults; a missing radius becomes 2.5x the bound diagonal
    (minimum 4) so the whole scene stays in frame."""
    rig = {**RIG_DEFAULTS, **rig_cfg}
    lo, hi = scene.bounds()
    center = (lo + hi) / 2.0
    if rig["radius"] is None:
        diag = float(np.linalg.norm(hi - lo))
        rig["radius"] = max(4.0, 2.5 * diag / 2.0)
    rig["center"] = [float(c) for c in np.asarray(rig.get("center", center))]
    return rig


def rig_cameras(rig: dict) -> list[Camera]:
    return orbit_rig(rig["center"], rig["radius"], rig["azimuth_steps"],
                     rig["elevations_deg"], fov_deg=rig["fov_deg"],
                     width=rig["width"], height=rig["height"])


def default_camera(rig: dict) -> Camera:
    return orbit_camera(rig["center"], rig["radius"], 0.0, rig["elevations_deg"][-1]
                        if rig["elevations_deg"] else 0.0,
                        fov_deg=rig["fov_deg"], width=rig["width"], height=rig["height"])


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise SceneError("config document must be a JSON object")
    return doc


def build_configs(config: dict, seed: int | None):
    prog = ProgressiveConfig(**config.get("progressive", {}))
    fld = OffsetFieldConfig(**config.get("field", {}))
    if seed is not None:
        prog = replace(prog, seed=seed)
        fld = replace(fld, seed=seed)
    threshold = float(config.get("mask_threshold", REGION_THRESHOLD))
    return prog, fld, threshold


@dataclass
class EditArtifacts:
    """One edit's on-disk products, loaded back into memory."""

    edit_id: str
    label: str
    spec: EditSpec
    region: RegionMask
    region_truth: RegionMask
    target_scene: Scene
    field: OffsetField
    trajectory: Trajectory


@dataclass
class SessionArtifacts:
    root: Path
    scene: Scene
    manifest: dict
    edits: list[EditArtifacts] = dc_field(default_factory=list)

    @property
    def rig(self) -> dict:
        return self.manifest["rig"]

    def edit(self, edit_id: str) -> EditArtifacts:
        for e in self.edits:
            if e.edit_id == edit_id:
                return e
        raise KeyError(edit_id)

    @classmethod
    def load(cls, root: str | Path) -> "SessionArtifacts":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise SceneError(f"not a session directory (no manifest.json): {root}")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("version") != MANIFEST_VERSION:
            raise SceneError("unsupported session manifest version")
        scene = decode_scene((root / manifest["scene"]).read_bytes())
        session = cls(root=root, scene=scene, manifest=manifest)
        for entry in manifest["edits"]:
            session.edits.append(EditArtifacts(
                edit_id=entry["id"],
                label=entry["label"],
                spec=EditSpec.from_json((root / entry["spec"]).read_text()),
                region=RegionMask.from_text((root / entry["region"]).read_text()),
                region_truth=RegionMask.from_text((root / entry["region_truth"]).read_text()),
                target_scene=decode_scene((root / entry["target_scene"]).read_bytes()),
                field=OffsetField.load(root / entry["model"]),
                trajectory=Trajectory.load(root / entry["trajectory"]),
            ))
        return session


def run_pipeline(scene_path: str | Path, edit_path: str | Path, out_dir: str | Path,
                 config_path: str | Path | None = None, seed: int | None = None,
                 log=lambda msg: None) -> SessionArtifacts:
    timings: dict[str, float] = {}
    t_start = time.perf_counter()

    def timed(stage):
        class _T:
            def __enter__(self_):
                self_.t0 = time.perf_counter()
                log(f"[{stage}] ...")
                return self_

            def __exit__(self_, et, ev, tb):
                if et is None:
                    timings[stage] = time.perf_counter() - self_.t0
                    log(f"[{stage}] done in {timings[stage]:.2f}s")
                return False
        return _T()

    def stage_wrap(stage, fn):
        try:
            return fn()
        except PipelineError:
            raise
        except Exception as e:
            raise PipelineError(stage, str(e)) from e

    with timed("load"):
        scene = stage_wrap("load", lambda: decode_scene(Path(scene_path).read_bytes()))
        spec = stage_wrap("load", lambda: EditSpec.from_json(Path(edit_path).read_text()))
        config = stage_wrap("load", lambda: load_config(config_path))
        prog_cfg, field_cfg, threshold = stage_wrap("load", lambda: build_configs(config, seed))
        rig = stage_wrap("load", lambda: resolve_rig(scene, config.get("rig", {})))
        cameras = stage_wrap("load", lambda: rig_cameras(rig))

    with timed("targets"):
        views, target_scene, region_truth = stage_wrap(
            "targets", lambda: build_view_set(scene, spec, cameras))

    with timed("region"):
        region = stage_wrap("region", lambda: recover_region(
            scene, cameras, views.masks, threshold))
        if region.count == 0 and region_truth.count > 0:
            raise PipelineError("region", "recovered region is empty")

    with timed("optimize"):
        trajectory, reports = stage_wrap("optimize", lambda: run_progressive_edit(
            scene, cameras, views.targets, region, prog_cfg))

    with timed("distill"):
        field, _ = stage_wrap("distill", lambda: train_offset_field(
            scene, trajectory, cameras, region, field_cfg))

    with timed("write"):
        def write():
            root = Path(out_dir)
            edit_id = "edit-000"
            edir = root / "edits" / edit_id
            edir.mkdir(parents=True, exist_ok=True)
            (root / "scene.json").write_bytes(encode_scene(scene))
            (edir / "spec.json").write_text(spec.to_json())
            (edir / "target_scene.json").write_bytes(encode_scene(target_scene))
            (edir / "region.txt").write_text(region.to_text())
            (edir / "region_truth.txt").write_text(region_truth.to_text())
            field.save(edir / "offset_field.bin")
            trajectory.save(edir / "trajectory")
            (edir / "trajectory" / "losses.csv").write_text(reports_to_csv(reports))
            manifest = {
                "version": MANIFEST_VERSION,
                "scene": "scene.json",
                "seed": seed,
                "rig": rig,
                "config": {
                    "progressive": _config_dict(prog_cfg),
                    "field": _config_dict(field_cfg),
                    "mask_threshold": threshold,
                },
                "edits": [{
                    "id": edit_id,
                    "label": spec.label or spec.kind,
                    "spec": f"edits/{edit_id}/spec.json",
                    "region": f"edits/{edit_id}/region.txt",
                    "region_truth": f"edits/{edit_id}/region_truth.txt",
                    "target_scene": f"edits/{edit_id}/target_scene.json",
                    "model": f"edits/{edit_id}/offset_field.bin",
                    "trajectory": f"edits/{edit_id}/trajectory",
                }],
            }
            (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
            return manifest
        manifest = stage_wrap("write", write)

    timings["total"] = time.perf_counter() - t_start
    (Path(out_dir) / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")

    session = SessionArtifacts(root=Path(out_dir), scene=scene, manifest=manifest)
    session.edits.append(EditArtifacts(
        edit_id="edit-000", label=spec.label or spec.kind, spec=spec,
        region=region, region_truth=region_truth, target_scene=target_scene,
        field=field, trajectory=trajectory))
    return session


def _config_dict(cfg) -> dict:
    out = {}
    for name in cfg.__dataclass_fields__:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, dict):
            v = dict(v)
        out[name] = v
    return out


def spearman_rank_correlation(xs, ys) -> float:
    """Spearman rho without scipy; 0 when either side has no variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    rx = _ranks(x)
    ry = _ranks(y)
    sx = rx.std()
    sy = ry.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def _ranks(v: np.ndarray) -> np.ndarray:
    """Average ranks (ties share their mean rank)."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def service_scene(session: SessionArtifacts, controls: list[tuple[str, float]]) -> Scene:
    """Scene for a set of (edit id, u) controls with serving semantics:
    u == 0 contributes nothing, so an all-zero request is the base scene."""
    active = []
    for edit_id, u in controls:
        e = session.edit(edit_id)  # raises KeyError for unknown ids
        if u != 0.0:
            active.append((e.field, e.region, u))
    if not active:
        return session.scene
    return compose_regions(session.scene, active)


EVAL_CONTROL_GRID = [round(0.1 * i, 1) for i in range(11)]


def run_eval(session_dir: str | Path, out_csv: str | Path,
             log=lambda msg: None) -> list[dict]:
    """Score a session; writes the CSV and endpoint frames, returns the rows."""
    session = SessionArtifacts.load(session_dir)
    cameras = rig_cameras(session.rig)
    cam0 = default_camera(session.rig)
    timings = {}
    tpath = session.root / "timings.json"
    if tpath.exists():
        timings = json.loads(tpath.read_text())

    originals = [render(session.scene, cam) for cam in cameras]
    rows: list[dict] = []
    for e in session.edits:
        log(f"eval {e.edit_id} ({e.label})")
        targets = [render(e.target_scene, cam) for cam in cameras]
        idx = e.region.indices()
        iou = _iou(e.region, e.region_truth)
        offset_norms = []
        per_u = []
        for u in EVAL_CONTROL_GRID:
            scene_u = service_scene(session, [(e.edit_id, u)])
            renders = [render(scene_u, cam) for cam in cameras]
            l1_orig = float(np.mean([np.abs(r.data - o.data).mean()
                                     for r, o in zip(renders, originals)]))
            l1_target = float(np.mean([np.abs(r.data - t.data).mean()
                                       for r, t in zip(renders, targets)]))
            sharp = float(np.mean([laplacian_response(r) for r in renders]))
            off = field_offsets(session.scene, e.field, e.region, u)
            off_l1 = float(np.abs(off[idx]).sum(axis=1).mean()) if idx.size else 0.0
            offset_norms.append(off_l1)
            per_u.append((u, l1_orig, l1_target, off_l1, sharp))
        rho = spearman_rank_correlation(EVAL_CONTROL_GRID, offset_norms)
        for u, l1_orig, l1_target, off_l1, sharp in per_u:
            rows.append({
                "edit": e.edit_id, "u": u,
                "l1_vs_original": l1_orig, "l1_vs_target": l1_target,
                "offset_l1": off_l1, "sharpness": sharp,
                "spearman": rho, "mask_iou": iou,
                "time_targets_s": timings.get("targets", ""),
                "time_region_s": timings.get("region", ""),
                "time_optimize_s": timings.get("optimize", ""),
                "time_distill_s": timings.get("distill", ""),
                "time_total_s": timings.get("total", ""),
            })
        # endpoint frames with serving semantics, for byte-level API checks
        eval_dir = session.root / "eval" / e.edit_id
        eval_dir.mkdir(parents=True, exist_ok=True)
        for u, name in ((0.0, "frame-u0.png"), (1.0, "frame-u1.png")):
            png = image_to_png(render(service_scene(session, [(e.edit_id, u)]), cam0))
            (eval_dir / name).write_bytes(png)

    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                ["edit", "u"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return rows


def _iou(a: RegionMask, b: RegionMask) -> float:
    union = np.logical_or(a.bits, b.bits).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a.bits, b.bits).sum() / union)
