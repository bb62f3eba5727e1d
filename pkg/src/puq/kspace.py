"""Multi-coil Cartesian acquisition: centered FFT, line masks, SENSE operators, data consistency.

Array conventions: images are (..., P, H, W), coil maps (..., C, H, W), line
masks (..., P, H) over phase-encode rows, k-space (..., C, P, H, W). A leading
batch axis is optional and must be shared by all arrays when present.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .diffnum.rng import RngStream


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D FFT over the last two axes."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def ifft2c(k: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def line_budget(n_lines: int, accel: float, acs_frac: float) -> tuple[int, int]:
    """(total sampled lines, ACS lines)."""
    return _round_half_up(n_lines / accel), _round_half_up(n_lines * acs_frac)


def make_mask(n_lines: int, accel: float, acs_frac: float, phase_index: int, seed: int) -> np.ndarray:
    """Random 1D line mask with a centred, fully sampled ACS block.

    Samples round(N/R) of the N phase-encode lines; the non-ACS lines are
    drawn uniformly without replacement from a stream keyed by
    (seed, phase_index).
    """
    if accel < 1:
        raise ValueError(f"acceleration must be >= 1, got {accel}")
    if not 0 < acs_frac < 1:
        raise ValueError(f"ACS fraction must be in (0, 1), got {acs_frac}")
    n_total, n_acs = line_budget(n_lines, accel, acs_frac)
    if n_acs > n_total:
        raise ValueError(
            f"ACS block of {n_acs} lines exceeds the budget of {n_total} lines "
            f"(N={n_lines}, R={accel}, acs={acs_frac})"
        )
    mask = np.zeros(n_lines, dtype=bool)
    start = n_lines // 2 - n_acs // 2
    mask[start : start + n_acs] = True
    rest = np.flatnonzero(~mask)
    rng = RngStream(seed, "mask", phase_index)
    mask[rng.choice(rest, n_total - n_acs, replace=False)] = True
    return mask


def make_masks(n_lines: int, accel: float, acs_frac: float, n_phases: int, seed: int) -> np.ndarray:
    """Independent per-phase masks, shape (P, N)."""
    return np.stack([make_mask(n_lines, accel, acs_frac, p, seed) for p in range(n_phases)])


def _expand(coils, masks):
    # coils (..., C, H, W) -> (..., C, 1, H, W); masks (..., P, H) -> (..., 1, P, H, 1)
    return coils[..., :, None, :, :], masks[..., None, :, :, None]


@dataclass
class Acquisition:
    """Measured multi-coil k-space with its sampling masks and coil maps."""

    kspace: np.ndarray  # (..., C, P, H, W), zero off the sampled lines
    masks: np.ndarray  # (..., P, H) bool
    coils: np.ndarray  # (..., C, H, W)

    def __post_init__(self):
        k, m, c = self.kspace.shape, self.masks.shape, self.coils.shape
        if k[-2:] != c[-2:] or k[-4] != c[-3] or k[-3:-1] != m[-2:] or k[:-4] != c[:-3] or k[:-4] != m[:-2]:
            raise ValueError(f"inconsistent acquisition shapes kspace={k} masks={m} coils={c}")

    @property
    def batched(self) -> bool:
        return self.kspace.ndim == 5

    def __len__(self):
        return self.kspace.shape[0]

    def __getitem__(self, idx) -> "Acquisition":
        return Acquisition(self.kspace[idx], self.masks[idx], self.coils[idx])

    @cached_property
    def zero_filled(self) -> np.ndarray:
        return adjoint_op(self.kspace, self.coils, self.masks)


def _check_image(x: np.ndarray, coils: np.ndarray, masks: np.ndarray):
    if x.shape[-2:] != coils.shape[-2:] or x.shape[-3] != masks.shape[-2] or x.shape[:-3] != coils.shape[:-3]:
        raise ValueError(f"image {x.shape} inconsistent with coils {coils.shape} / masks {masks.shape}")


def forward_op(x: np.ndarray, coils: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """y[c, p] = M_p * F(S_c * x_p)."""
    _check_image(x, coils, masks)
    ce, me = _expand(coils, masks)
    return fft2c(ce * x[..., None, :, :, :]) * me


def adjoint_op(y: np.ndarray, coils: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """x[p] = sum_c conj(S_c) * F^-1(M_p * y[c, p])."""
    ce, me = _expand(coils, masks)
    return np.sum(np.conj(ce) * ifft2c(y * me), axis=-4)


def forward(x: np.ndarray, acq: Acquisition) -> np.ndarray:
    return forward_op(x, acq.coils, acq.masks)


def adjoint(y: np.ndarray, acq: Acquisition) -> np.ndarray:
    return adjoint_op(y, acq.coils, acq.masks)


def zero_filled(acq: Acquisition) -> np.ndarray:
    return acq.zero_filled


def unsampled_projection(x: np.ndarray, coils: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """sum_c conj(S_c) F^-1((1 - M) F(S_c x)): the data-independent part of the DC layer.

    Hermitian in the complex inner product, so it is its own adjoint.
    """
    _check_image(x, coils, masks)
    ce, me = _expand(coils, masks)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        k = fft2c(ce * x[..., None, :, :, :])
        return np.sum(np.conj(ce) * ifft2c(k * ~me), axis=-4)
    # for even sizes the centring shifts cancel inside F^-1 (.) F, leaving only
    # the mask to be moved to the uncentred frequency layout
    keep = ~np.fft.ifftshift(me, axes=-2)
    k = sfft.fft2(ce * x[..., None, :, :, :], norm="ortho", overwrite_x=True)
    k *= keep
    return np.sum(np.conj(ce) * sfft.ifft2(k, norm="ortho", overwrite_x=True), axis=-4)


def dc_layer(x: np.ndarray, acq: Acquisition) -> np.ndarray:
    """Replace sampled k-space lines of every coil image by the measured data.

    Equals unsampled_projection(x) + adjoint(y) since y vanishes off the mask.
    """
    return unsampled_projection(x, acq.coils, acq.masks) + acq.zero_filled


def acquire(
    images: np.ndarray,
    coils: np.ndarray,
    masks: np.ndarray,
    noise_std: float = 0.0,
    rng: RngStream | None = None,
) -> tuple[Acquisition, np.ndarray]:
    """Simulate a scan of ``images``.

    Returns the undersampled acquisition and the fully sampled (noisy)
    multi-coil k-space. Noise is complex Gaussian with E|n|^2 = noise_std^2,
    drawn for every k-space location before masking.
    """
    full_masks = np.ones_like(masks, dtype=bool)
    full = forward_op(images, coils, full_masks)
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an RngStream")
        n = rng.normal(full.shape) + 1j * rng.normal(full.shape)
        full = full + noise_std / np.sqrt(2) * n
    _, me = _expand(coils, masks)
    return Acquisition(full * me, masks, coils), full
