"""Slider-conditioned neural offset field.

A small MLP maps (positional encoding of a Gaussian's rest position,
control-bin embedding of a slider value in [0, 1]) to a 14-dim raw-space
offset. The output layer is zero-initialized, so an untrained field is exactly
the identity edit. Training distills an optimization trajectory: snapshots go
into a bank keyed by normalized time u = t / T, and each step pushes the
field's predicted scene toward a render of a sampled snapshot (L1 + perceptual
+ sharpness), with gradients flowing through the rasterizer into the MLP.

The slider axis is discretized into `control_bins` embeddings; a query blends
the two neighboring bins linearly, clamped so u = 0 and u = 1 hit the first
and last bin exactly. Offsets from several fields (multi-region editing)
simply add in raw space before one activation pass.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .core import (RAW_DIM, Camera, RawParams, RegionMask, Scene, SceneError,
                   apply_offsets)
from .losses import edit_loss_grad
from .optim import Adam
from .renderer import (DEFAULT_OPTIONS, RenderOptions, laplacian_response_grad,
                     render, render_backward)

MODEL_MAGIC = b"GDF1"
MODEL_VERSION = 1

SAMPLING_MODES = ("uniform", "sequential")


@dataclass(frozen=True)
class OffsetFieldConfig:
    control_bins: int = 10
    embed_dim: int = 32
    pe_frequencies: int = 6
    hidden_dims: tuple[int, ...] = (256, 256, 256)
    iterations: int = 2000
    learning_rate: float = 2e-3
    bank_interval: int = 100
    perceptual_weight: float = 0.2
    sharpness_weight: float = 1.0
    sampling: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.control_bins < 1:
            raise SceneError("control_bins must be >= 1")
        if self.embed_dim < 1 or self.pe_frequencies < 0:
            raise SceneError("bad embedding configuration")
        if self.iterations < 0:
            raise SceneError("iterations must be >= 0")
        if self.bank_interval < 1:
            raise SceneError("bank_interval must be >= 1")
        if self.sampling not in SAMPLING_MODES:
            raise SceneError(f"unknown sampling mode: {self.sampling!r}")

    @property
    def input_dim(self) -> int:
        return 3 + 6 * self.pe_frequencies + self.embed_dim


def control_to_bins(u: float, bins: int) -> tuple[int, int, float]:
    """Map a control value to (lower bin, upper bin, blend weight).

    Bin centers sit at (i + 0.5) / bins; outside the first/last center the
    blend clamps, so u=0 is purely bin 0 and u=1 purely the last bin.
    """
    if not 0.0 <= u <= 1.0:
        raise SceneError("control value must lie in [0, 1]")
    if bins < 1:
        raise SceneError("bins must be >= 1")
    c = u * bins - 0.5
    i0 = int(np.clip(np.floor(c), 0, bins - 1))
    i1 = min(i0 + 1, bins - 1)
    w = float(np.clip(c - i0, 0.0, 1.0))
    if i0 == i1:
        w = 0.0
    return i0, i1, w


def positional_encoding(points: np.ndarray, frequencies: int,
                        dtype=np.float64) -> np.ndarray:
    """[p, sin(2^l pi p), cos(2^l pi p) for l < frequencies], per axis."""
    p = np.asarray(points, dtype=dtype).reshape(-1, 3)
    feats = [p]
    for l in range(frequencies):
        s = (2.0 ** l) * np.pi * p
        feats.append(np.sin(s))
        feats.append(np.cos(s))
    return np.concatenate(feats, axis=1)


class OffsetField:
    """MLP + control embedding table. Parameters live in `self.params`:
    'table' (bins, embed_dim), then 'w{i}'/'b{i}' per linear layer."""

    def __init__(self, config: OffsetFieldConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.n_layers = len(config.hidden_dims) + 1

    @classmethod
    def create(cls, config: OffsetFieldConfig, seed: int | None = None) -> "OffsetField":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        params: dict[str, np.ndarray] = {
            "table": 0.1 * rng.standard_normal((config.control_bins, config.embed_dim))
        }
        dims = [config.input_dim, *config.hidden_dims, RAW_DIM]
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            if last:
                # zero output layer: the untrained field is the identity edit
                params[f"w{i}"] = np.zeros((dout, din))
            else:
                params[f"w{i}"] = rng.standard_normal((dout, din)) * np.sqrt(2.0 / din)
            params[f"b{i}"] = np.zeros(dout)
        return cls(config, params)

    def embedding(self, u: float) -> tuple[np.ndarray, tuple[int, int, float]]:
        i0, i1, w = control_to_bins(u, self.config.control_bins)
        table = self.params["table"]
        return (1.0 - w) * table[i0] + w * table[i1], (i0, i1, w)

    def forward(self, points: np.ndarray, u: float) -> np.ndarray:
        """Offsets (M, 14) for rest positions (M, 3) at control u.

        Inference-only path: runs in float32 (~2x faster single-threaded,
        which is what keeps slider latency interactive) and retains no
        activations. Training goes through `_forward_cached` in float64.
        """
        enc = positional_encoding(points, self.config.pe_frequencies,
                                  dtype=np.float32)
        emb, _ = self.embedding(u)
        h = np.concatenate(
            [enc, np.broadcast_to(emb.astype(np.float32), (enc.shape[0], emb.shape[0]))],
            axis=1)
        for i in range(self.n_layers):
            h = h @ self.params[f"w{i}"].T.astype(np.float32) \
                + self.params[f"b{i}"].astype(np.float32)
            if i < self.n_layers - 1:
                np.maximum(h, 0.0, out=h)
        return h.astype(np.float64)

    def _forward_cached(self, points: np.ndarray, u: float):
        enc = positional_encoding(points, self.config.pe_frequencies)
        emb, bins = self.embedding(u)
        h = np.concatenate([enc, np.broadcast_to(emb, (enc.shape[0], emb.shape[0]))], axis=1)
        acts = [h]
        for i in range(self.n_layers):
            z = acts[-1] @ self.params[f"w{i}"].T + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                z = np.maximum(z, 0.0)
            acts.append(z)
        return acts[-1], (acts, bins)

    def backward(self, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients (weights, biases, embedding table) for
        sum(d_out * forward(...))."""
        acts, (i0, i1, w) = cache
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(d_out, dtype=np.float64)
        for i in range(self.n_layers - 1, -1, -1):
            if i < self.n_layers - 1:
                g = g * (acts[i + 1] > 0.0)  # ReLU mask
            grads[f"w{i}"] = g.T @ acts[i]
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"w{i}"]
        # g is now dL/d input; the embedding occupies the trailing slice and
        # was broadcast across rows
        g_emb = g[:, -self.config.embed_dim:].sum(axis=0)
        table = np.zeros_like(self.params["table"])
        table[i0] += (1.0 - w) * g_emb
        table[i1] += w * g_emb
        grads["table"] = table
        return grads

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # --- serialization: magic, version, dims, then float32 blobs -----------

    def to_bytes(self) -> bytes:
        cfg = self.config
        dims = [cfg.input_dim, *cfg.hidden_dims, RAW_DIM]
        head = MODEL_MAGIC + struct.pack(
            "<IIIII", MODEL_VERSION, cfg.control_bins, cfg.embed_dim,
            cfg.pe_frequencies, len(dims))
        head += struct.pack(f"<{len(dims)}I", *dims)
        blobs = [self.params["table"].astype("<f4").tobytes()]
        for i in range(self.n_layers):
            blobs.append(self.params[f"w{i}"].astype("<f4").tobytes())
            blobs.append(self.params[f"b{i}"].astype("<f4").tobytes())
        return head + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes, config: OffsetFieldConfig | None = None) -> "OffsetField":
        if len(data) < 24 or data[:4] != MODEL_MAGIC:
            raise SceneError("bad offset-field model magic")
        version, bins, embed, freqs, ndims = struct.unpack("<IIIII", data[4:24])
        if version != MODEL_VERSION:
            raise SceneError(f"unsupported offset-field model version: {version}")
        off = 24
        dims = list(struct.unpack(f"<{ndims}I", data[off:off + 4 * ndims]))
        off += 4 * ndims
        if ndims < 2 or dims[-1] != RAW_DIM:
            raise SceneError("offset-field model has inconsistent layer dims")
        cfg = config or OffsetFieldConfig(control_bins=bins, embed_dim=embed,
                                          pe_frequencies=freqs,
                                          hidden_dims=tuple(dims[1:-1]))
        if (cfg.control_bins, cfg.embed_dim, cfg.pe_frequencies) != (bins, embed, freqs) \
                or cfg.input_dim != dims[0] or tuple(cfg.hidden_dims) != tuple(dims[1:-1]):
            raise SceneError("offset-field model header does not match configuration")

        def take(shape):
            nonlocal off
            n = int(np.prod(shape))
            end = off + 4 * n
            if end > len(data):
                raise SceneError("offset-field model is truncated")
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
            off = end
            return arr.reshape(shape)

        params = {"table": take((bins, embed))}
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"w{i}"] = take((dout, din))
            params[f"b{i}"] = take((dout,))
        if off != len(data):
            raise SceneError("offset-field model has trailing bytes")
        return cls(cfg, params)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path, config: OffsetFieldConfig | None = None) -> "OffsetField":
        return cls.from_bytes(Path(path).read_bytes(), config)


@dataclass
class SnapshotBank:
    """Trajectory snapshots the field trains against: (step, scene) pairs with
    the run's total step count, so entries map to controls u = t / T."""

    entries: list[tuple[int, Scene]] = dc_field(default_factory=list)
    total_steps: int = 0

    @classmethod
    def from_trajectory(cls, trajectory, interval: int) -> "SnapshotBank":
        total = trajectory.total_steps
        bank = cls(total_steps=total)
        for t, scene in zip(trajectory.times, trajectory.scenes):
            if t % interval == 0 or t in (0, total):
                bank.append(t, scene)
        return bank

    def append(self, t: int, scene: Scene) -> None:
        if self.entries and t <= self.entries[-1][0]:
            raise SceneError("bank entries must arrive in increasing time order")
        if t > self.total_steps:
            raise SceneError("bank entry beyond total_steps")
        self.entries.append((t, scene))

    def __len__(self) -> int:
        return len(self.entries)

    def control_of(self, t: int) -> float:
        return t / self.total_steps if self.total_steps > 0 else 0.0

    def sample(self, rng: np.random.Generator) -> tuple[int, Scene]:
        if not self.entries:
            raise SceneError("cannot sample from an empty bank")
        return self.entries[int(rng.integers(len(self.entries)))]

    def validate_span(self) -> None:
        """A distillation-ready bank covers both endpoints."""
        times = [t for t, _ in self.entries]
        if not times or times[0] != 0 or times[-1] != self.total_steps:
            raise SceneError("bank must contain t=0 and t=total_steps")


def field_offsets(scene0: Scene, field: OffsetField, region: RegionMask,
                  u: float) -> np.ndarray:
    """Dense (N, 14) offsets: field output on region rows, zero elsewhere."""
    if region.size != scene0.count:
        raise SceneError("region mask size mismatch")
    offsets = np.zeros((scene0.count, RAW_DIM))
    idx = region.indices()
    if idx.size:
        offsets[idx] = field.forward(scene0.positions[idx], u)
    return offsets


def predict_scene(scene0: Scene, field: OffsetField, region: RegionMask,
                  u: float) -> Scene:
    """Edited scene at control u: one batched field query, offsets applied in
    raw space. No optimization loop runs here."""
    return apply_offsets(scene0, field_offsets(scene0, field, region, u), region)


def compose_regions(scene0: Scene,
                    controls: list[tuple[OffsetField, RegionMask, float]]) -> Scene:
    """Apply several (field, region, control) edits at once. Offsets sum in
    raw space on overlapping Gaussians before a single activation pass;
    Gaussians in no region are untouched bit-for-bit."""
    total = np.zeros((scene0.count, RAW_DIM))
    union = np.zeros(scene0.count, dtype=bool)
    for field, region, u in controls:
        total += field_offsets(scene0, field, region, u)
        union |= region.bits
    return apply_offsets(scene0, total, RegionMask(union))


@dataclass(frozen=True)
class FieldStepReport:
    """Loss decomposition for one distillation step (pre-update state).
    total = edit + sharpness_weight * render_sharpness."""

    step: int
    t: int
    u: float
    view: int
    edit_l1: float
    edit_perceptual: float
    edit: float
    render_sharpness: float
    total: float


class _TargetCache:
    """Memoized renders of bank snapshots, keyed by (time, view)."""

    def __init__(self, cameras: list[Camera], options: RenderOptions):
        self.cameras = cameras
        self.options = options
        self._store: dict[tuple[int, int], np.ndarray] = {}

    def get(self, t: int, scene: Scene, view: int) -> np.ndarray:
        key = (t, view)
        if key not in self._store:
            self._store[key] = render(scene, self.cameras[view], self.options).data
        return self._store[key]


def distill_step(field: OffsetField, scene0: Scene, raw0: RawParams,
                 region_idx: np.ndarray, t: int, snapshot_or_target,
                 view: int, cameras: list[Camera], cfg: OffsetFieldConfig,
                 total_steps: int, adam: Adam, cache: _TargetCache | None,
                 options: RenderOptions, step: int) -> FieldStepReport:
    """One training step against snapshot (t, scene) seen from `view`."""
    u = t / total_steps if total_steps > 0 else 0.0
    if cache is not None:
        target = cache.get(t, snapshot_or_target, view)
    else:
        target = render(snapshot_or_target, cameras[view], options).data

    pts = scene0.positions[region_idx]
    offsets, fcache = field._forward_cached(pts, u)

    m = raw0.as_matrix()
    m[region_idx] += offsets
    raw_pred = RawParams.from_matrix(m)

    # splice activated region rows into a bitwise copy of the base scene
    scene_pred = scene0.copy()
    sub = RawParams.from_matrix(m[region_idx])
    act = sub.activate(scene0.background)
    scene_pred.positions[region_idx] = act.positions
    scene_pred.scales[region_idx] = act.scales
    scene_pred.rotations[region_idx] = act.rotations
    scene_pred.opacities[region_idx] = act.opacities
    scene_pred.colors[region_idx] = act.colors

    img = render(scene_pred, cameras[view], options)
    eloss, g_edit = edit_loss_grad(img.data, target, cfg.perceptual_weight)
    sharp, g_sharp = laplacian_response_grad(img.data)
    adjoint = g_edit - cfg.sharpness_weight * g_sharp

    grads = render_backward(scene_pred, cameras[view], adjoint,
                            raw=raw_pred, options=options)
    d_offsets = np.concatenate(
        [grads.positions[region_idx], grads.log_scales[region_idx],
         grads.rotations[region_idx], grads.opacity_logits[region_idx, None],
         grads.color_logits[region_idx]], axis=1)
    adam.step(field.backward(fcache, d_offsets))

    total = eloss.total + cfg.sharpness_weight * (-sharp)
    return FieldStepReport(step=step, t=t, u=u, view=view, edit_l1=eloss.l1,
                           edit_perceptual=eloss.perceptual, edit=eloss.total,
                           render_sharpness=-sharp, total=total)


def train_offset_field(scene0: Scene, trajectory, cameras: list[Camera],
                       region: RegionMask, cfg: OffsetFieldConfig,
                       options: RenderOptions = DEFAULT_OPTIONS
                       ) -> tuple[OffsetField, list[FieldStepReport]]:
    """Distill a finished trajectory into an offset field.

    `sampling="uniform"` draws bank entries independently each step;
    `"sequential"` walks them in time order across the budget (kept for
    comparison — it forgets early snapshots).
    """
    scene0.validate()
    if not cameras:
        raise SceneError("need at least one camera")
    if region.size != scene0.count:
        raise SceneError("region mask size mismatch")
    bank = SnapshotBank.from_trajectory(trajectory, cfg.bank_interval)
    bank.validate_span()

    field = OffsetField.create(cfg)
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(field.params, lr=cfg.learning_rate)
    raw0 = RawParams.from_scene(scene0)
    idx = region.indices()
    cache = _TargetCache(cameras, options)

    reports: list[FieldStepReport] = []
    for step in range(cfg.iterations):
        if cfg.sampling == "uniform":
            t, snap = bank.sample(rng)
        else:
            t, snap = bank.entries[min(step * len(bank) // max(cfg.iterations, 1),
                                       len(bank) - 1)]
        view = int(rng.integers(len(cameras)))
        reports.append(distill_step(field, scene0, raw0, idx, t, snap, view,
                                    cameras, cfg, bank.total_steps, adam, cache,
                                    options, step))
    return field, reports


def train_offset_field_online(scene0: Scene, cameras: list[Camera], targets,
                              region: RegionMask, prog_cfg, cfg: OffsetFieldConfig,
                              options: RenderOptions = DEFAULT_OPTIONS):
    """Run the progressive optimization and distill concurrently: snapshots
    stream into the bank as they appear and the field trains on what exists so
    far. Returns (trajectory, field, field step reports)."""
    from .progressive import run_progressive_edit, snapshot_times

    scene0.validate()
    field = OffsetField.create(cfg)
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(field.params, lr=cfg.learning_rate)
    raw0 = RawParams.from_scene(scene0)
    idx = region.indices()
    bank = SnapshotBank(total_steps=prog_cfg.total_steps)
    n_snaps = len(snapshot_times(prog_cfg.total_steps, prog_cfg.snapshot_interval))
    chunk = cfg.iterations // max(n_snaps, 1)
    reports: list[FieldStepReport] = []
    cache = _TargetCache(cameras, options)

    def on_snapshot(t: int, scene: Scene) -> None:
        bank.append(t, scene)
        for _ in range(chunk):
            bt, snap = bank.sample(rng)
            view = int(rng.integers(len(cameras)))
            reports.append(distill_step(field, scene0, raw0, idx, bt, snap, view,
                                        cameras, cfg, bank.total_steps, adam,
                                        cache, options, len(reports)))

    trajectory, _ = run_progressive_edit(scene0, cameras, targets, region,
                                         prog_cfg, options, on_snapshot=on_snapshot)
    return trajectory, field, reports
