"""Differentiable CPU rasterizer for Gaussian splat scenes.

Forward: each Gaussian is projected to a 2D splat (perspective-affine
covariance transfer, +0.3 px^2 isotropic regularization), splats are sorted
globally front-to-back by camera depth (ties by original index) and
alpha-composited per pixel:

    C = sum_i c_i * alpha_i * prod_{j<i} (1 - alpha_j) + bg * prod_i (1 - alpha_i)

with alpha_i = opacity_i * exp(-0.5 d^T cov2d^{-1} d), clamped to 0.99,
skipped below 1/255, and evaluated inside a 3-sigma bounding box.

Backward: hand-derived reverse-mode gradients of a scalar loss w.r.t. the raw
(optimization-space) parameters, given dL/dImage. The compositing chain is
replayed back-to-front, recovering per-splat transmittance exactly (alpha is
clamped away from 1, so transmittance factors are invertible).
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .core import (Camera, ImageBuffer, RawParams, Scene, SceneError,
                   normalize_quaternions, quaternion_to_rotation)

ALPHA_CLAMP = 0.99
ALPHA_CUTOFF = 1.0 / 255.0
COV2D_REG = 0.3
NEAR_PLANE = 0.01


@dataclass(frozen=True)
class RenderOptions:
    """Rasterizer knobs. The cutoff/bound switches exist so tests can compare
    against a brute-force oracle with no early-outs."""

    near: float = NEAR_PLANE
    cov_reg: float = COV2D_REG
    alpha_clamp: float = ALPHA_CLAMP
    alpha_cutoff: float = ALPHA_CUTOFF
    sigma_bound: float | None = 3.0


DEFAULT_OPTIONS = RenderOptions()


@dataclass(frozen=True)
class Splat2D:
    """Projected footprint of one Gaussian."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source_index: int


@dataclass
class RenderGradients:
    """dLoss/dRaw for every Gaussian (rows outside a render's support are 0)."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    color_logits: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f) for f in RawParams.FIELDS}

    def as_matrix(self) -> np.ndarray:
        """(N, 14) gradient in the raw-parameter column layout."""
        return np.concatenate(
            [self.positions, self.log_scales, self.rotations,
             self.opacity_logits[:, None], self.color_logits], axis=1)

    @classmethod
    def zeros(cls, n: int) -> "RenderGradients":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                   np.zeros(n), np.zeros((n, 3)))


class _SplatBatch:
    """Visible splats in front-to-back order plus cached projection terms."""

    __slots__ = ("count", "source", "mean", "depth", "conic", "cov", "color",
                 "opacity", "bbox", "p_cam", "mjw", "sigma3", "rot3", "quat")

    def __init__(self):
        self.count = 0


def _prepare(scene: Scene, cam: Camera, opts: RenderOptions) -> _SplatBatch:
    sb = _SplatBatch()
    n = scene.count
    if n == 0:
        return sb
    P = scene.positions @ cam.rotation.T + cam.translation
    keep = P[:, 2] > opts.near
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return sb
    # global front-to-back order; stable sort keeps original-index tie-break
    order = np.argsort(P[idx, 2], kind="stable")
    idx = idx[order]

    p = P[idx]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    fx, fy = cam.fx, cam.fy
    mean = np.stack([fx * x / z + cam.cx, fy * y / z + cam.cy], axis=1)

    quat = normalize_quaternions(scene.rotations[idx])
    R = quaternion_to_rotation(quat)
    S = scene.scales[idx]
    Q = R * S[:, None, :]
    sigma3 = Q @ np.transpose(Q, (0, 2, 1))

    m = idx.size
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    mjw = J @ cam.rotation
    cov = mjw @ sigma3 @ np.transpose(mjw, (0, 2, 1))
    cov[:, 0, 0] += opts.cov_reg
    cov[:, 1, 1] += opts.cov_reg

    s11, s12, s22 = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = s11 * s22 - s12 * s12
    conic = np.stack([s22 / det, -s12 / det, s11 / det], axis=1)

    if opts.sigma_bound is None:
        x0 = np.zeros(m, dtype=np.int64)
        y0 = np.zeros(m, dtype=np.int64)
        x1 = np.full(m, cam.width - 1, dtype=np.int64)
        y1 = np.full(m, cam.height - 1, dtype=np.int64)
    else:
        rx = opts.sigma_bound * np.sqrt(s11)
        ry = opts.sigma_bound * np.sqrt(s22)
        x0 = np.maximum(np.ceil(mean[:, 0] - rx), 0).astype(np.int64)
        x1 = np.minimum(np.floor(mean[:, 0] + rx), cam.width - 1).astype(np.int64)
        y0 = np.maximum(np.ceil(mean[:, 1] - ry), 0).astype(np.int64)
        y1 = np.minimum(np.floor(mean[:, 1] + ry), cam.height - 1).astype(np.int64)

    sb.count = m
    sb.source = idx
    sb.mean = mean
    sb.depth = z
    sb.conic = conic
    sb.cov = cov
    sb.color = scene.colors[idx]
    sb.opacity = scene.opacities[idx]
    sb.bbox = np.stack([x0, x1, y0, y1], axis=1)
    sb.p_cam = p
    sb.mjw = mjw
    sb.sigma3 = sigma3
    sb.rot3 = R
    sb.quat = quat
    return sb


def project_gaussian(scene: Scene, index: int, cam: Camera,
                     options: RenderOptions = DEFAULT_OPTIONS) -> Splat2D | None:
    """Project one Gaussian; None when culled by the near plane."""
    if not 0 <= index < scene.count:
        raise SceneError("gaussian index out of range")
    sub = Scene(positions=scene.positions[index:index + 1],
                scales=scene.scales[index:index + 1],
                rotations=scene.rotations[index:index + 1],
                opacities=scene.opacities[index:index + 1],
                colors=scene.colors[index:index + 1],
                background=scene.background)
    sb = _prepare(sub, cam, options)
    if sb.count == 0:
        return None
    return Splat2D(mean2d=sb.mean[0].copy(), cov2d=sb.cov[0].copy(),
                   depth=float(sb.depth[0]), source_index=index)


def _splat_alpha(sb: _SplatBatch, k: int, opts: RenderOptions):
    """alpha over the splat's clipped bbox; returns (ys, xs, alpha, active)."""
    x0, x1, y0, y1 = sb.bbox[k]
    if x1 < x0 or y1 < y0:
        return None
    xs = np.arange(x0, x1 + 1, dtype=np.float64) - sb.mean[k, 0]
    ys = np.arange(y0, y1 + 1, dtype=np.float64) - sb.mean[k, 1]
    a, b, c = sb.conic[k]
    power = (-0.5 * a) * (xs * xs)[None, :] + (-0.5 * c) * (ys * ys)[:, None] \
        - b * ys[:, None] * xs[None, :]
    g = np.exp(power)
    alpha = np.minimum(sb.opacity[k] * g, opts.alpha_clamp)
    active = alpha >= opts.alpha_cutoff if opts.alpha_cutoff > 0 else alpha > 0
    return (slice(y0, y1 + 1), slice(x0, x1 + 1)), alpha, active


def render(scene: Scene, cam: Camera,
           options: RenderOptions = DEFAULT_OPTIONS) -> ImageBuffer:
    """Rasterize the scene. Output channels lie in [0, 1] (convex blend of
    splat colors and background, up to float rounding)."""
    scene.validate()
    sb = _prepare(scene, cam, options)
    img = np.zeros((cam.height, cam.width, 3))
    trans = np.ones((cam.height, cam.width))
    for k in range(sb.count):
        hit = _splat_alpha(sb, k, options)
        if hit is None:
            continue
        win, alpha, active = hit
        w = np.where(active, alpha, 0.0) * trans[win]
        img[win] += w[:, :, None] * sb.color[k]
        trans[win] *= np.where(active, 1.0 - alpha, 1.0)
    img += trans[:, :, None] * scene.background[None, None, :]
    return ImageBuffer(img)


def render_backward(scene: Scene, cam: Camera, adjoint: np.ndarray | ImageBuffer,
                    raw: RawParams | None = None,
                    options: RenderOptions = DEFAULT_OPTIONS) -> RenderGradients:
    """Gradients of sum(adjoint * image) w.r.t. raw parameters.

    `raw` supplies the unnormalized rotation rows that produced the scene (the
    quaternion-normalization backward needs their norms); omitted, the scene's
    own unit rotations are used. Reduction order is fixed, so results are
    deterministic for identical inputs.
    """
    scene.validate()
    adj = adjoint.data if isinstance(adjoint, ImageBuffer) else np.asarray(adjoint, dtype=np.float64)
    if adj.shape != (cam.height, cam.width, 3):
        raise SceneError(f"adjoint shape {adj.shape} does not match image "
                         f"({cam.height}, {cam.width}, 3)")
    n = scene.count
    grads = RenderGradients.zeros(n)
    sb = _prepare(scene, cam, options)

    # forward replay, keeping per-splat footprints for the reverse sweep
    trans = np.ones((cam.height, cam.width))
    saved: list[tuple | None] = []
    for k in range(sb.count):
        hit = _splat_alpha(sb, k, options)
        saved.append(hit)
        if hit is None:
            continue
        win, alpha, active = hit
        trans[win] *= np.where(active, 1.0 - alpha, 1.0)

    t_after = trans  # transmittance after all splats; rewound in the loop
    suffix = trans[:, :, None] * scene.background[None, None, :]

    m = sb.count
    g_mean = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_color = np.zeros((m, 3))
    g_opacity = np.zeros(m)

    for k in range(m - 1, -1, -1):
        hit = saved[k]
        if hit is None:
            continue
        win, alpha, active = hit
        one_minus = np.where(active, 1.0 - alpha, 1.0)
        t_before = t_after[win] / one_minus
        adj_win = adj[win]

        awt = np.where(active, alpha, 0.0) * t_before
        g_color[k] = np.einsum("yxc,yx->c", adj_win, awt)

        # dL/dalpha at active pixels: this splat's own term plus the shading
        # of everything behind it through (1 - alpha)
        d_alpha = (adj_win * (sb.color[k][None, None, :] * t_before[:, :, None]
                              - suffix[win] / one_minus[:, :, None])).sum(axis=2)
        d_alpha = np.where(active, d_alpha, 0.0)

        # alpha = min(opacity * g, clamp); clamped pixels pass no gradient
        unclamped = active & (alpha < options.alpha_clamp)
        g_gauss = np.where(sb.opacity[k] > 0, alpha / max(sb.opacity[k], 1e-300), 0.0)
        g_opacity[k] = float((np.where(unclamped, d_alpha, 0.0) * g_gauss).sum())
        d_power = np.where(unclamped, d_alpha, 0.0) * sb.opacity[k] * g_gauss

        x0, x1, y0, y1 = sb.bbox[k]
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - sb.mean[k, 0]
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - sb.mean[k, 1]
        dx = np.broadcast_to(xs[None, :], d_power.shape)
        dy = np.broadcast_to(ys[:, None], d_power.shape)
        a, b, c = sb.conic[k]
        g_conic[k, 0] = (d_power * (-0.5) * dx * dx).sum()
        g_conic[k, 1] = (d_power * (-dx * dy)).sum()
        g_conic[k, 2] = (d_power * (-0.5) * dy * dy).sum()
        g_mean[k, 0] = (d_power * (a * dx + b * dy)).sum()
        g_mean[k, 1] = (d_power * (b * dx + c * dy)).sum()

        suffix[win] += (awt[:, :, None] * sb.color[k][None, None, :])
        t_after[win] = t_before

    if m > 0:
        _chain_to_raw(sb, cam, scene, raw, g_mean, g_conic, g_color, g_opacity, grads)
    return grads


def _chain_to_raw(sb: _SplatBatch, cam: Camera, scene: Scene, raw: RawParams | None,
                  g_mean, g_conic, g_color, g_opacity, grads: RenderGradients) -> None:
    """Vectorized chain from 2D-splat gradients down to raw parameters."""
    a, b, c = sb.conic[:, 0], sb.conic[:, 1], sb.conic[:, 2]
    ga, gb, gc = g_conic[:, 0], g_conic[:, 1], g_conic[:, 2]

    # conic = inverse of cov2d; (a,b,c) parameterize the symmetric inverse
    ds11 = ga * (-a * a) + gb * (-a * b) + gc * (-b * b)
    ds12 = ga * (-2 * a * b) + gb * (-(a * c + b * b)) + gc * (-2 * b * c)
    ds22 = ga * (-b * b) + gb * (-b * c) + gc * (-c * c)
    G2 = np.empty((sb.count, 2, 2))
    G2[:, 0, 0] = ds11
    G2[:, 0, 1] = ds12 * 0.5
    G2[:, 1, 0] = ds12 * 0.5
    G2[:, 1, 1] = ds22

    mjw = sb.mjw
    G3 = np.transpose(mjw, (0, 2, 1)) @ G2 @ mjw          # dL/dSigma3 (symmetric)
    d_mjw = 2.0 * (G2 @ mjw @ sb.sigma3)                   # dL/dM for cov = M S M^T
    dJ = d_mjw @ cam.rotation.T

    S = scene.scales[sb.source]
    Q = sb.rot3 * S[:, None, :]
    dQ = 2.0 * (G3 @ Q)
    d_scale = np.einsum("mik,mik->mk", dQ, sb.rot3)
    dR = dQ * S[:, None, :]

    q = sb.quat
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = dR
    dq = np.empty_like(q)
    dq[:, 0] = (-2 * z * r[:, 0, 1] + 2 * y * r[:, 0, 2] + 2 * z * r[:, 1, 0]
                - 2 * x * r[:, 1, 2] - 2 * y * r[:, 2, 0] + 2 * x * r[:, 2, 1])
    dq[:, 1] = (2 * y * r[:, 0, 1] + 2 * z * r[:, 0, 2] + 2 * y * r[:, 1, 0]
                - 4 * x * r[:, 1, 1] - 2 * w * r[:, 1, 2] + 2 * z * r[:, 2, 0]
                + 2 * w * r[:, 2, 1] - 4 * x * r[:, 2, 2])
    dq[:, 2] = (-4 * y * r[:, 0, 0] + 2 * x * r[:, 0, 1] + 2 * w * r[:, 0, 2]
                + 2 * x * r[:, 1, 0] + 2 * z * r[:, 1, 2] - 2 * w * r[:, 2, 0]
                + 2 * z * r[:, 2, 1] - 4 * y * r[:, 2, 2])
    dq[:, 3] = (-4 * z * r[:, 0, 0] - 2 * w * r[:, 0, 1] + 2 * x * r[:, 0, 2]
                + 2 * w * r[:, 1, 0] - 4 * z * r[:, 1, 1] + 2 * y * r[:, 1, 2]
                + 2 * x * r[:, 2, 0] + 2 * y * r[:, 2, 1])

    # projection: mean2d and J both depend on the camera-space point
    fx, fy = cam.fx, cam.fy
    px, py, pz = sb.p_cam[:, 0], sb.p_cam[:, 1], sb.p_cam[:, 2]
    du, dv = g_mean[:, 0], g_mean[:, 1]
    inv_z = 1.0 / pz
    inv_z2 = inv_z * inv_z
    d_cam = np.empty((sb.count, 3))
    d_cam[:, 0] = du * fx * inv_z + dJ[:, 0, 2] * (-fx * inv_z2)
    d_cam[:, 1] = dv * fy * inv_z + dJ[:, 1, 2] * (-fy * inv_z2)
    d_cam[:, 2] = (-du * fx * px * inv_z2 - dv * fy * py * inv_z2
                   + dJ[:, 0, 0] * (-fx * inv_z2) + dJ[:, 1, 1] * (-fy * inv_z2)
                   + dJ[:, 0, 2] * (2 * fx * px * inv_z2 * inv_z)
                   + dJ[:, 1, 2] * (2 * fy * py * inv_z2 * inv_z))
    d_pos = d_cam @ cam.rotation

    # raw-space chains
    opac = sb.opacity
    col = sb.color
    d_log_scale = d_scale * S
    d_opacity_logit = g_opacity * opac * (1.0 - opac)
    d_color_logit = g_color * col * (1.0 - col)

    if raw is not None:
        if raw.count != scene.count:
            raise SceneError("raw parameter count does not match scene")
        raw_rot = raw.rotations[sb.source]
    else:
        raw_rot = scene.rotations[sb.source]
    norms = np.linalg.norm(raw_rot, axis=1)
    dq_raw = (dq - (dq * q).sum(axis=1, keepdims=True) * q) / norms[:, None]

    src = sb.source
    grads.positions[src] = d_pos
    grads.log_scales[src] = d_log_scale
    grads.rotations[src] = dq_raw
    grads.opacity_logits[src] = d_opacity_logit
    grads.color_logits[src] = d_color_logit


def laplacian_response(image: ImageBuffer | np.ndarray) -> float:
    """Mean squared response of the 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]]
    with replicate padding; a flat image scores 0."""
    r = _laplacian(_as_image_array(image))
    return float(np.mean(r * r))


def laplacian_response_grad(image: ImageBuffer | np.ndarray) -> tuple[float, np.ndarray]:
    """(value, dValue/dImage)."""
    img = _as_image_array(image)
    r = _laplacian(img)
    value = float(np.mean(r * r))
    dr = (2.0 / r.size) * r
    gp = np.zeros((img.shape[0] + 2, img.shape[1] + 2, img.shape[2]))
    gp[:-2, 1:-1] += dr
    gp[2:, 1:-1] += dr
    gp[1:-1, :-2] += dr
    gp[1:-1, 2:] += dr
    gp[1:-1, 1:-1] += -4.0 * dr
    g = gp[1:-1, 1:-1].copy()
    g[0, :] += gp[0, 1:-1]
    g[-1, :] += gp[-1, 1:-1]
    g[:, 0] += gp[1:-1, 0]
    g[:, -1] += gp[1:-1, -1]
    g[0, 0] += gp[0, 0]
    g[0, -1] += gp[0, -1]
    g[-1, 0] += gp[-1, 0]
    g[-1, -1] += gp[-1, -1]
    return value, g


def _as_image_array(image) -> np.ndarray:
    arr = image.data if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _laplacian(img: np.ndarray) -> np.ndarray:
    xp = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    return (xp[:-2, 1:-1] + xp[2:, 1:-1] + xp[1:-1, :-2] + xp[1:-1, 2:]
            - 4.0 * xp[1:-1, 1:-1])


def image_to_png(image: ImageBuffer | np.ndarray) -> bytes:
    """8-bit PNG bytes; values are clipped to [0,1] and rounded half-up."""
    arr = _as_image_array(image)
    u8 = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    im = Image.fromarray(u8, mode="RGB")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def png_to_image(data: bytes) -> ImageBuffer:
    im = Image.open(io.BytesIO(data)).convert("RGB")
    return ImageBuffer(np.asarray(im, dtype=np.float64) / 255.0)
