"""Synthetic edit targets.

An EditSpec names a region of Gaussians and a parametric scene edit (recolor,
hue shift, translate, uniform scale about the region centroid, brighten).
Applying it to a scene yields the fully edited scene, per-view target images,
and ground-truth 2D region masks — the supervision a real editing backend
would produce, generated here in closed form so every downstream stage can be
scored against a known answer.
"""
from __future__ import annotations

import colorsys
import io
import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .core import Camera, ImageBuffer, RegionMask, Scene, SceneError
from .renderer import DEFAULT_OPTIONS, RenderOptions, render, _prepare, _splat_alpha

EDIT_KINDS = ("recolor", "hue_shift", "translate", "scale", "brighten")
SPEC_VERSION = 1

# a pixel belongs to a view mask when the region's accumulated alpha-weight
# exceeds this much of a unit ray
MASK_PIXEL_THRESHOLD = 0.5


class EditSpecError(ValueError):
    pass


@dataclass(frozen=True)
class EditSpec:
    """Declarative edit: what to change and on which Gaussians."""

    kind: str
    params: dict
    region_indices: tuple[int, ...] | None = None  # None means all Gaussians
    label: str = ""

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise EditSpecError(f"unknown edit kind: {self.kind!r}")
        p = self.params
        if self.kind == "recolor":
            col = np.asarray(p.get("color"), dtype=np.float64)
            if col.shape != (3,) or np.any(col < 0) or np.any(col > 1):
                raise EditSpecError("recolor needs params.color in [0,1]^3")
        elif self.kind == "hue_shift":
            if "degrees" not in p:
                raise EditSpecError("hue_shift needs params.degrees")
        elif self.kind == "translate":
            off = np.asarray(p.get("offset"), dtype=np.float64)
            if off.shape != (3,):
                raise EditSpecError("translate needs params.offset of length 3")
        elif self.kind in ("scale", "brighten"):
            if "factor" not in p or float(p["factor"]) <= 0:
                raise EditSpecError(f"{self.kind} needs a positive params.factor")

    def resolve_region(self, scene_size: int) -> RegionMask:
        if self.region_indices is None:
            return RegionMask.full(scene_size)
        return RegionMask.from_indices(scene_size, self.region_indices)

    def to_json(self) -> str:
        doc = {"version": SPEC_VERSION, "kind": self.kind, "params": self.params,
               "label": self.label}
        doc["region"] = ({"all": True} if self.region_indices is None
                         else {"indices": list(self.region_indices)})
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str | bytes) -> "EditSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise EditSpecError(f"edit spec is not valid JSON: {e}") from e
        if not isinstance(doc, dict) or doc.get("version") != SPEC_VERSION:
            raise EditSpecError("unsupported edit spec document")
        region = doc.get("region", {"all": True})
        indices = None if region.get("all") else tuple(int(i) for i in region["indices"])
        return cls(kind=doc.get("kind", ""), params=doc.get("params", {}),
                   region_indices=indices, label=doc.get("label", ""))


def _shift_hue(colors: np.ndarray, degrees: float) -> np.ndarray:
    out = np.empty_like(colors)
    d = (degrees / 360.0) % 1.0
    for i, (r, g, b) in enumerate(colors):
        h, s, v = colorsys.rgb_to_hsv(r, g, b)
        out[i] = colorsys.hsv_to_rgb((h + d) % 1.0, s, v)
    return out


def build_edit_target(scene: Scene, spec: EditSpec) -> tuple[Scene, RegionMask]:
    """Edited scene plus the ground-truth region. Identity parameter values
    (hue shift 0, factor 1, zero offset) return the scene bit-for-bit."""
    region = spec.resolve_region(scene.count)
    idx = region.indices()
    out = scene.copy()
    if idx.size == 0:
        return out, region
    p = spec.params
    if spec.kind == "recolor":
        out.colors[idx] = np.asarray(p["color"], dtype=np.float64)
    elif spec.kind == "hue_shift":
        deg = float(p["degrees"])
        if deg % 360.0 != 0.0:
            out.colors[idx] = np.clip(_shift_hue(scene.colors[idx], deg), 0.0, 1.0)
    elif spec.kind == "translate":
        off = np.asarray(p["offset"], dtype=np.float64)
        if np.any(off != 0.0):
            out.positions[idx] = scene.positions[idx] + off
    elif spec.kind == "scale":
        f = float(p["factor"])
        if f != 1.0:
            centroid = scene.positions[idx].mean(axis=0)
            out.positions[idx] = centroid + f * (scene.positions[idx] - centroid)
            out.scales[idx] = f * scene.scales[idx]
    elif spec.kind == "brighten":
        f = float(p["factor"])
        if f != 1.0:
            out.colors[idx] = np.clip(f * scene.colors[idx], 0.0, 1.0)
    return out, region


@dataclass
class Mask2D:
    """Boolean pixel mask for one view."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise SceneError("2D mask must have shape (H, W)")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def to_png(self) -> bytes:
        im = Image.fromarray((self.bits.astype(np.uint8)) * 255, mode="L")
        buf = io.BytesIO()
        im.save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png(cls, data: bytes) -> "Mask2D":
        im = Image.open(io.BytesIO(data)).convert("L")
        return cls(np.asarray(im) >= 128)


def region_weight_image(scene: Scene, cam: Camera, region: RegionMask,
                        options: RenderOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Per-pixel sum of alpha * transmittance over the region's Gaussians."""
    if region.size != scene.count:
        raise SceneError("region mask size mismatch")
    sb = _prepare(scene, cam, options)
    acc = np.zeros((cam.height, cam.width))
    trans = np.ones((cam.height, cam.width))
    in_region = region.bits[sb.source] if sb.count else np.zeros(0, dtype=bool)
    for k in range(sb.count):
        hit = _splat_alpha(sb, k, options)
        if hit is None:
            continue
        win, alpha, active = hit
        w = np.where(active, alpha, 0.0) * trans[win]
        if in_region[k]:
            acc[win] += w
        trans[win] *= np.where(active, 1.0 - alpha, 1.0)
    return acc


def ground_truth_masks(scene: Scene, region: RegionMask, cameras: list[Camera],
                       options: RenderOptions = DEFAULT_OPTIONS) -> list[Mask2D]:
    """One mask per view: pixels where the region's compositing weight
    exceeds MASK_PIXEL_THRESHOLD of a unit ray."""
    return [Mask2D(region_weight_image(scene, cam, region, options) > MASK_PIXEL_THRESHOLD)
            for cam in cameras]


def render_edit_views(scene: Scene, cameras: list[Camera],
                      options: RenderOptions = DEFAULT_OPTIONS) -> list[ImageBuffer]:
    return [render(scene, cam, options) for cam in cameras]


@dataclass
class ViewSet:
    """Everything the optimization consumes for one edit: cameras, original
    renders, per-view targets, and ground-truth 2D masks."""

    cameras: list[Camera]
    originals: list[ImageBuffer]
    targets: list[ImageBuffer]
    masks: list[Mask2D]

    def __post_init__(self):
        n = len(self.cameras)
        if n < 1:
            raise SceneError("a view set needs at least one camera")
        if n > 96:
            raise SceneError("view sets are capped at 96 cameras")
        if not (len(self.originals) == len(self.targets) == len(self.masks) == n):
            raise SceneError("view set lists must have equal length")

    def __len__(self) -> int:
        return len(self.cameras)


def build_view_set(scene: Scene, spec: EditSpec, cameras: list[Camera],
                   options: RenderOptions = DEFAULT_OPTIONS) -> tuple[ViewSet, Scene, RegionMask]:
    """Run the oracle end to end for a camera rig."""
    target_scene, region = build_edit_target(scene, spec)
    return (
        ViewSet(
            cameras=list(cameras),
            originals=render_edit_views(scene, cameras, options),
            targets=render_edit_views(target_scene, cameras, options),
            masks=ground_truth_masks(scene, region, cameras, options),
        ),
        target_scene,
        region,
    )
