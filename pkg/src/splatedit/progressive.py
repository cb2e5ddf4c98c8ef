"""Progressive multi-view edit optimization.

Optimizes the raw parameters of the Gaussians inside a region toward per-view
edit targets with Adam, under a loss of three parts:

    total = le * edit + lp * penalty + ls * sharpness

* edit: L1 + perceptual term against the sampled view's target;
* penalty: mean L1 raw-space displacement of the region's Gaussians since the
  previous step, weighted by an exponentially growing schedule
  w(t) = init * growth^(t / time_scale) — cheap motion early, expensive late,
  which spreads the edit over the whole run instead of front-loading it;
* sharpness: negated Laplacian response of the render, rewarding detail.

Out-of-region Gaussians are never written: snapshots splice optimized rows
into bit-identical copies of the input scene. Snapshots are taken at t = 0,
every `snapshot_interval` steps, and at t = T.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (RAW_DIM, Camera, ImageBuffer, RawParams, RegionMask, Scene,
                   SceneError, decode_scene_binary, encode_scene_binary)
from .losses import edit_loss_grad
from .optim import Adam
from .renderer import (DEFAULT_OPTIONS, RenderOptions, laplacian_response_grad,
                     render, render_backward)

DEFAULT_LEARNING_RATES = {
    "positions": 1.6e-4,
    "log_scales": 5e-3,
    "rotations": 1e-3,
    "opacity_logits": 5e-2,
    "color_logits": 2.5e-2,
}

VIEW_SCHEDULES = ("round_robin", "shuffle")


@dataclass(frozen=True)
class ProgressiveConfig:
    total_steps: int = 1500
    snapshot_interval: int = 100
    lambda_edit: float = 1.0
    lambda_progressive: float = 5.0
    lambda_sharpness: float = 1.0
    prog_weight_init: float = 0.05
    prog_growth: float = 1.1
    prog_time_scale: float = 50.0
    perceptual_weight: float = 0.2
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LEARNING_RATES))
    view_schedule: str = "round_robin"
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 0:
            raise SceneError("total_steps must be >= 0")
        if self.snapshot_interval < 1:
            raise SceneError("snapshot_interval must be >= 1")
        if self.prog_growth <= 0 or self.prog_time_scale <= 0:
            raise SceneError("progressive schedule needs positive growth and time scale")
        if self.view_schedule not in VIEW_SCHEDULES:
            raise SceneError(f"unknown view schedule: {self.view_schedule!r}")
        if set(self.learning_rates) != set(RawParams.FIELDS):
            raise SceneError("learning_rates must name exactly the raw parameter groups")


def progressive_weight(t: int, cfg: ProgressiveConfig) -> float:
    """w(t) = init * growth^(t / time_scale)."""
    return cfg.prog_weight_init * cfg.prog_growth ** (t / cfg.prog_time_scale)


def progressive_penalty(current: dict[str, np.ndarray], previous: dict[str, np.ndarray],
                        t: int, cfg: ProgressiveConfig,
                        n_coords: int | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted mean absolute displacement per raw coordinate since `previous`,
    plus its gradient w.r.t. `current`.

    `n_coords` overrides the element count when `current` holds only the
    optimized (in-region) rows of a larger scene: frozen rows contribute zero
    displacement, so the sum is unaffected but the mean must still be taken
    over the whole raw matrix to keep the penalty scale independent of how
    large the edited region happens to be.
    """
    w = progressive_weight(t, cfg)
    total = sum(v.size for v in current.values())
    n = max(n_coords if n_coords is not None else total, 1)
    value = 0.0
    grads = {}
    for k, cur in current.items():
        d = cur - previous[k]
        value += float(np.abs(d).sum())
        grads[k] = (w / n) * np.sign(d)
    return w * value / n, grads


@dataclass(frozen=True)
class StepReport:
    """Loss decomposition for one optimizer step (values on the pre-update
    state). total = le*edit + lp*progressive + ls*render_sharpness."""

    t: int
    view: int
    edit_l1: float
    edit_perceptual: float
    edit: float
    progressive: float
    render_sharpness: float
    total: float


def reports_to_csv(reports: list[StepReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "edit", "prog", "render", "total"])
    for r in reports:
        w.writerow([r.t, f"{r.edit:.10g}", f"{r.progressive:.10g}",
                    f"{r.render_sharpness:.10g}", f"{r.total:.10g}"])
    return buf.getvalue()


@dataclass
class Trajectory:
    """Edit states sampled along the optimization: strictly increasing times
    from 0 to total_steps, one scene per time."""

    times: list[int]
    scenes: list[Scene]
    total_steps: int

    def __post_init__(self):
        if len(self.times) != len(self.scenes) or not self.times:
            raise SceneError("trajectory needs matching, non-empty times/scenes")
        if self.times[0] != 0 or self.times[-1] != self.total_steps:
            raise SceneError("trajectory must start at t=0 and end at t=total_steps")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise SceneError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def scene_at(self, t: int) -> Scene:
        try:
            return self.scenes[self.times.index(t)]
        except ValueError:
            raise SceneError(f"no snapshot at t={t}") from None

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for t, scene in zip(self.times, self.scenes):
            name = f"step-{t:06d}.pgdf"
            (d / name).write_bytes(encode_scene_binary(scene))
            files.append(name)
        manifest = {
            "version": 1,
            "total_steps": self.total_steps,
            "times": self.times,
            "files": files,
            "background": self.scenes[0].background.tolist(),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "Trajectory":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        if manifest.get("version") != 1:
            raise SceneError("unsupported trajectory manifest version")
        bg = manifest["background"]
        scenes = [decode_scene_binary((d / f).read_bytes(), bg) for f in manifest["files"]]
        return cls(times=list(manifest["times"]), scenes=scenes,
                   total_steps=int(manifest["total_steps"]))


def snapshot_times(total_steps: int, interval: int) -> list[int]:
    ts = list(range(0, total_steps + 1, interval))
    if ts[-1] != total_steps:
        ts.append(total_steps)
    return ts


def _assemble(scene0: Scene, params: dict[str, np.ndarray], idx: np.ndarray) -> Scene:
    """Splice activated region rows into a bitwise copy of the base scene."""
    out = scene0.copy()
    if idx.size == 0:
        return out
    sub = RawParams(positions=params["positions"], log_scales=params["log_scales"],
                    rotations=params["rotations"], opacity_logits=params["opacity_logits"],
                    color_logits=params["color_logits"])
    act = sub.activate(scene0.background)
    out.positions[idx] = act.positions
    out.scales[idx] = act.scales
    out.rotations[idx] = act.rotations
    out.opacities[idx] = act.opacities
    out.colors[idx] = act.colors
    return out


def _full_raw(raw0: RawParams, params: dict[str, np.ndarray], idx: np.ndarray) -> RawParams:
    full = raw0.copy()
    for k in RawParams.FIELDS:
        getattr(full, k)[idx] = params[k]
    return full


def run_progressive_edit(scene: Scene, cameras: list[Camera], targets: list[ImageBuffer],
                         region: RegionMask, cfg: ProgressiveConfig,
                         options: RenderOptions = DEFAULT_OPTIONS,
                         on_snapshot=None) -> tuple[Trajectory, list[StepReport]]:
    """Optimize the region toward the targets; returns the snapshot trajectory
    and per-step loss reports. `on_snapshot(t, scene)` fires as snapshots are
    taken, t=0 included, so downstream consumers can train concurrently.
    """
    scene.validate()
    if len(cameras) != len(targets) or not cameras:
        raise SceneError("need at least one camera with a matching target")
    if region.size != scene.count:
        raise SceneError("region mask size mismatch")

    idx = region.indices()
    raw0 = RawParams.from_scene(scene)
    params = {k: getattr(raw0, k)[idx].copy() for k in RawParams.FIELDS}
    prev = {k: v.copy() for k, v in params.items()}
    adam = Adam(params, lr=cfg.learning_rates)
    rng = np.random.default_rng(cfg.seed)

    times = snapshot_times(cfg.total_steps, cfg.snapshot_interval)
    time_set = set(times)
    snaps: dict[int, Scene] = {0: scene.copy()}
    if on_snapshot is not None:
        on_snapshot(0, snaps[0])

    order = np.arange(len(cameras))
    if cfg.view_schedule == "shuffle":
        order = rng.permutation(len(cameras))

    reports: list[StepReport] = []
    for t in range(1, cfg.total_steps + 1):
        k = (t - 1) % len(cameras)
        if k == 0 and cfg.view_schedule == "shuffle" and t > 1:
            order = rng.permutation(len(cameras))
        view = int(order[k])

        entry = {key: v.copy() for key, v in params.items()}
        scene_t = _assemble(scene, params, idx)
        img = render(scene_t, cameras[view], options)
        eloss, g_edit = edit_loss_grad(img.data, targets[view].data, cfg.perceptual_weight)
        sharp, g_sharp = laplacian_response_grad(img.data)
        pval, pgrads = progressive_penalty(params, prev, t, cfg,
                                           n_coords=scene.count * RAW_DIM)

        adjoint = cfg.lambda_edit * g_edit - cfg.lambda_sharpness * g_sharp
        grads = render_backward(scene_t, cameras[view], adjoint,
                                raw=_full_raw(raw0, params, idx), options=options)
        gd = grads.as_dict()
        # the adjoint already carries lambda_edit / lambda_sharpness
        step_grads = {key: gd[key][idx] + cfg.lambda_progressive * pgrads[key]
                      for key in RawParams.FIELDS}
        adam.step(step_grads)
        prev = entry

        total = (cfg.lambda_edit * eloss.total + cfg.lambda_progressive * pval
                 + cfg.lambda_sharpness * (-sharp))
        reports.append(StepReport(t=t, view=view, edit_l1=eloss.l1,
                                  edit_perceptual=eloss.perceptual, edit=eloss.total,
                                  progressive=pval, render_sharpness=-sharp, total=total))

        if t in time_set:
            snaps[t] = _assemble(scene, params, idx)
            if on_snapshot is not None:
                on_snapshot(t, snaps[t])

    traj = Trajectory(times=times, scenes=[snaps[t] for t in times],
                      total_steps=cfg.total_steps)
    return traj, reports
