"""Masked NRMSE and SSIM for parameter maps."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

K1 = 0.01
K2 = 0.03
WIN_SIZE = 11
WIN_SIGMA = 1.5


def _mask(mask, shape):
    m = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} != map shape {shape}")
    if not m.any():
        raise ValueError("mask is empty")
    return m


def nrmse(est, ref, mask=None) -> float:
    """||(est - ref) on mask|| / ||ref on mask||."""
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    m = _mask(mask, ref.shape)
    denom = np.linalg.norm(ref[m])
    if denom == 0:
        raise ValueError("reference has zero norm on the mask")
    return float(np.linalg.norm(est[m] - ref[m]) / denom)


def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _filter(img, w):
    out = correlate1d(img, w, axis=-2, mode="reflect")
    return correlate1d(out, w, axis=-1, mode="reflect")


def ssim_map(est, ref, data_range: float) -> np.ndarray:
    w = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = _filter(est, w), _filter(ref, w)
    sxx = _filter(est * est, w) - mx * mx
    syy = _filter(ref * ref, w) - my * my
    sxy = _filter(est * ref, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(est, ref, mask=None, data_range: float | None = None) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5) over the mask.

    ``data_range`` defaults to max(ref) - min(ref) over the mask.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape or est.ndim != 2:
        raise ValueError(f"ssim needs two 2D maps of equal shape, got {est.shape} and {ref.shape}")
    m = _mask(mask, ref.shape)
    if data_range is None:
        data_range = float(ref[m].max() - ref[m].min())
    if data_range <= 0:
        raise ValueError("reference is constant on the mask (zero dynamic range)")
    return float(np.mean(ssim_map(est, ref, data_range)[m]))
