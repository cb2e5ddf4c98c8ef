"""Image losses with analytic gradients w.r.t. the rendered image.

The edit loss is L1 plus a weighted structural-dissimilarity term
(1 - mean SSIM). SSIM uses a 7x7 Gaussian window (sigma 1.5), C1 = 0.01^2,
C2 = 0.03^2, computed over valid windows only, averaged across channels.
No pretrained networks anywhere; everything here is closed-form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ImageBuffer

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PERCEPTUAL_WEIGHT = 0.2


def _window_kernel() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    xs = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    k = np.exp(-(xs * xs) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


_KERNEL = _window_kernel()


def _as_array(img) -> np.ndarray:
    arr = img.data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with the SSIM window; (H,W,C) ->
    (H-6, W-6, C)."""
    t = sliding_window_view(x, SSIM_WINDOW, axis=1) @ _KERNEL
    return sliding_window_view(t, SSIM_WINDOW, axis=0) @ _KERNEL


def _spread_full(g: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of _filter_valid: scatter window-space gradients back to
    (h, w, C). The kernel is symmetric, so this is a zero-padded valid pass."""
    pad = SSIM_WINDOW - 1
    gp = np.pad(g, ((pad, pad), (pad, pad), (0, 0)))
    out = _filter_valid(gp)
    assert out.shape[:2] == (h, w)
    return out


@dataclass(frozen=True)
class EditLoss:
    """Decomposed edit loss; total = l1 + weight * (1 - mssim)."""

    total: float
    l1: float
    perceptual: float


def mean_ssim(a, b) -> float:
    """Mean SSIM over valid windows and channels. Inputs need H, W >= 7."""
    return _ssim_core(_as_array(a), _as_array(b))[0]


def _ssim_core(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError("images smaller than the SSIM window")
    ux = _filter_valid(x)
    uy = _filter_valid(y)
    vx = _filter_valid(x * x)
    vy = _filter_valid(y * y)
    vxy = _filter_valid(x * y)
    sx = vx - ux * ux
    sy = vy - uy * uy
    sxy = vxy - ux * uy
    a1 = 2 * ux * uy + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = ux * ux + uy * uy + SSIM_C1
    b2 = sx + sy + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return float(np.mean(s)), (ux, uy, a1, a2, b1, b2, s)


def mean_ssim_grad(a, b) -> tuple[float, np.ndarray]:
    """(mssim, d mssim / d a). Gradient is w.r.t. the first image."""
    x = _as_array(a)
    y = _as_array(b)
    value, (ux, uy, a1, a2, b1, b2, s) = _ssim_core(x, y)
    p = 1.0 / s.size
    # d s / d ux, d s / d vx, d s / d vxy  (window space)
    ds_dux = 2 * uy * (a2 - a1) / (b1 * b2) - 2 * ux * s / b1 + 2 * ux * s / b2
    ds_dvx = -s / b2
    ds_dvxy = 2 * a1 / (b1 * b2)
    h, w = x.shape[0], x.shape[1]
    grad = (_spread_full(p * ds_dux, h, w)
            + 2.0 * x * _spread_full(p * ds_dvx, h, w)
            + y * _spread_full(p * ds_dvxy, h, w))
    return value, grad


def edit_loss(rendered, target, perceptual_weight: float = PERCEPTUAL_WEIGHT) -> EditLoss:
    x = _as_array(rendered)
    y = _as_array(target)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    l1 = float(np.mean(np.abs(x - y)))
    perceptual = 1.0 - mean_ssim(x, y)
    return EditLoss(total=l1 + perceptual_weight * perceptual, l1=l1, perceptual=perceptual)


def edit_loss_grad(rendered, target,
                   perceptual_weight: float = PERCEPTUAL_WEIGHT) -> tuple[EditLoss, np.ndarray]:
    """(loss, dTotal/dRendered)."""
    x = _as_array(rendered)
    y = _as_array(target)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    diff = x - y
    l1 = float(np.mean(np.abs(diff)))
    g_l1 = np.sign(diff) / diff.size
    mssim, g_ssim = mean_ssim_grad(x, y)
    loss = EditLoss(total=l1 + perceptual_weight * (1.0 - mssim),
                    l1=l1, perceptual=1.0 - mssim)
    return loss, g_l1 - perceptual_weight * g_ssim
