"""Lifting 2D edit masks to a per-Gaussian region.

Every ray that a Gaussian touches votes with its compositing weight
alpha * transmittance; votes under the mask accumulate into `weights`, all
votes into `totals`, and `hits` counts the rays. A Gaussian joins the region
when the masked share of its total contribution reaches the threshold — an
absolute per-ray average would top out well below 1 for any finite footprint,
so membership is a fraction of what the Gaussian actually contributes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, RegionMask, Scene, SceneError
from .edits import Mask2D
from .renderer import DEFAULT_OPTIONS, RenderOptions, _prepare, _splat_alpha

REGION_THRESHOLD = 0.8


@dataclass
class UnprojectionAccumulator:
    """Per-Gaussian vote tallies, mergeable across views."""

    weights: np.ndarray  # masked alpha-transmittance mass
    totals: np.ndarray   # unmasked mass (denominator for the masked share)
    hits: np.ndarray     # number of rays with alpha above the render cutoff

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n = self.weights.shape[0]
        self.totals = np.asarray(self.totals, dtype=np.float64).reshape(n)
        self.hits = np.asarray(self.hits, dtype=np.int64).reshape(n)

    @classmethod
    def zeros(cls, n: int) -> "UnprojectionAccumulator":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def merge(self, other: "UnprojectionAccumulator") -> "UnprojectionAccumulator":
        if other.size != self.size:
            raise SceneError("accumulator size mismatch")
        return UnprojectionAccumulator(self.weights + other.weights,
                                       self.totals + other.totals,
                                       self.hits + other.hits)

    def average(self) -> np.ndarray:
        """Masked mass per ray (0 where a Gaussian was never hit)."""
        out = np.zeros_like(self.weights)
        np.divide(self.weights, self.hits, out=out, where=self.hits > 0)
        return out

    def masked_fraction(self) -> np.ndarray:
        """Share of a Gaussian's total contribution that fell under masks."""
        out = np.zeros_like(self.weights)
        np.divide(self.weights, self.totals, out=out, where=self.totals > 0)
        return out


def accumulate_mask_weights(scene: Scene, cameras: list[Camera], masks: list[Mask2D],
                            options: RenderOptions = DEFAULT_OPTIONS) -> UnprojectionAccumulator:
    """Tally every Gaussian's masked/total contribution across all views."""
    if len(cameras) != len(masks):
        raise SceneError("need one mask per camera")
    acc = UnprojectionAccumulator.zeros(scene.count)
    for cam, mask in zip(cameras, masks):
        if mask.bits.shape != (cam.height, cam.width):
            raise SceneError("mask shape does not match camera image")
        sb = _prepare(scene, cam, options)
        trans = np.ones((cam.height, cam.width))
        mbits = mask.bits.astype(np.float64)
        for k in range(sb.count):
            hit = _splat_alpha(sb, k, options)
            if hit is None:
                continue
            win, alpha, active = hit
            w = np.where(active, alpha, 0.0) * trans[win]
            src = sb.source[k]
            acc.weights[src] += float((w * mbits[win]).sum())
            acc.totals[src] += float(w.sum())
            acc.hits[src] += int(active.sum())
            trans[win] *= np.where(active, 1.0 - alpha, 1.0)
    return acc


def threshold_region(acc: UnprojectionAccumulator,
                     threshold: float = REGION_THRESHOLD) -> RegionMask:
    """Gaussians whose masked share reaches the threshold (never-hit ones
    stay out). Growing any 2D mask can only add members, never remove."""
    if not 0.0 <= threshold <= 1.0:
        raise SceneError("threshold must lie in [0, 1]")
    frac = acc.masked_fraction()
    return RegionMask((acc.hits > 0) & (frac >= threshold))


def recover_region(scene: Scene, cameras: list[Camera], masks: list[Mask2D],
                   threshold: float = REGION_THRESHOLD,
                   options: RenderOptions = DEFAULT_OPTIONS) -> RegionMask:
    return threshold_region(accumulate_mask_weights(scene, cameras, masks, options),
                            threshold)
