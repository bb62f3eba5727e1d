"""Synthetic ground truth: ellipse phantoms, relaxation signal models, coil maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnum.rng import RngStream

T2PREP_TEPREP_MS = (0.0, 25.0, 35.0, 45.0, 65.0, 85.0, 105.0, 125.0)
MOLLI_TI_MS = (251.0, 400.0, 1251.0, 1400.0, 2251.0, 2400.0, 3251.0, 4251.0)


@dataclass(frozen=True)
class Tissue:
    t1: float
    t2: float
    pd: float

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError(f"T1 and T2 must be positive, got T1={self.t1}, T2={self.t2}")
        if self.pd < 0:
            raise ValueError(f"PD must be non-negative, got {self.pd}")


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in pixel coordinates; ``angle`` in radians, counter-clockwise."""

    center: tuple[float, float]  # (row, col)
    semi_axes: tuple[float, float]  # (along rotated row, along rotated col)
    tissue: Tissue
    angle: float = 0.0

    def contains(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        dr = rows - self.center[0]
        dc = cols - self.center[1]
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        u = dr * ca + dc * sa
        v = -dr * sa + dc * ca
        a, b = self.semi_axes
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    height: int
    width: int
    regions: tuple[Ellipse, ...] = ()
    background: Tissue = Tissue(t1=1.0, t2=1.0, pd=0.0)


@dataclass(frozen=True)
class SequencePreset:
    kind: str  # "T2prep" or "MOLLI"
    timings: tuple[float, ...]
    # B/A of the apparent-recovery model used when simulating MOLLI
    inversion_ratio: float = 1.9

    def __post_init__(self):
        t = np.asarray(self.timings, dtype=float)
        if self.kind not in ("T2prep", "MOLLI"):
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if t.size < 2:
            raise ValueError("a sequence needs at least two phases")
        if self.kind == "T2prep" and np.any(t < 0):
            raise ValueError("TEprep values must be non-negative")
        if self.kind == "MOLLI" and (np.any(t < 0) or np.any(np.diff(t) <= 0)):
            raise ValueError("TI values must be non-negative and strictly increasing")
        if self.inversion_ratio <= 1:
            raise ValueError("inversion_ratio must exceed 1")

    @property
    def n_phases(self) -> int:
        return len(self.timings)

    @property
    def parameter(self) -> str:
        return "T2" if self.kind == "T2prep" else "T1"

    @classmethod
    def t2prep(cls) -> "SequencePreset":
        return cls("T2prep", T2PREP_TEPREP_MS)

    @classmethod
    def molli(cls) -> "SequencePreset":
        return cls("MOLLI", MOLLI_TI_MS)

    @classmethod
    def named(cls, kind: str) -> "SequencePreset":
        return {"T2prep": cls.t2prep, "MOLLI": cls.molli}[kind]()


def t2prep_signal(pd, t2, te):
    """PD * exp(-TE / T2)."""
    t2 = np.asarray(t2, dtype=float)
    if np.any(t2 <= 0):
        raise ValueError("T2 must be positive")
    return np.asarray(pd, dtype=float) * np.exp(-np.asarray(te, dtype=float) / t2)


def molli_signal(a, b, t1star, ti):
    """|A - B exp(-TI / T1*)|; true T1 = T1* (B/A - 1)."""
    t1star = np.asarray(t1star, dtype=float)
    if np.any(t1star <= 0):
        raise ValueError("T1* must be positive")
    return np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float) * np.exp(-np.asarray(ti, dtype=float) / t1star))


def make_phantom(spec: PhantomSpec):
    """Rasterize a spec into (t1_map, t2_map, pd_map, foreground_mask)."""
    if spec.height < 1 or spec.width < 1:
        raise ValueError(f"empty phantom grid {spec.height}x{spec.width}")
    shape = (spec.height, spec.width)
    t1 = np.full(shape, spec.background.t1)
    t2 = np.full(shape, spec.background.t2)
    pd = np.full(shape, spec.background.pd)
    rows, cols = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    for region in spec.regions:
        inside = region.contains(rows, cols)
        t1[inside] = region.tissue.t1
        t2[inside] = region.tissue.t2
        pd[inside] = region.tissue.pd
    return t1, t2, pd, pd > 0


def random_phantom_spec(
    height: int,
    width: int,
    seed: int,
    index: int = 0,
    n_regions: tuple[int, int] = (6, 10),
    t1_range: tuple[float, float] = (300.0, 2000.0),
    t2_range: tuple[float, float] = (40.0, 250.0),
    pd_range: tuple[float, float] = (0.5, 1.0),
) -> PhantomSpec:
    """Head-like phantom: one large outer ellipse plus smaller random compartments.

    ``n_regions`` bounds the total compartment count including the outer one.
    """
    rng = RngStream(seed, "phantom", index)

    def tissue():
        return Tissue(
            t1=float(rng.uniform(*t1_range)),
            t2=float(rng.uniform(*t2_range)),
            pd=float(rng.uniform(*pd_range)),
        )

    cy, cx = (height - 1) / 2, (width - 1) / 2
    outer = Ellipse(
        center=(cy + rng.uniform(-0.03, 0.03) * height, cx + rng.uniform(-0.03, 0.03) * width),
        semi_axes=(height * rng.uniform(0.38, 0.45), width * rng.uniform(0.30, 0.40)),
        tissue=tissue(),
        angle=float(rng.uniform(-0.2, 0.2)),
    )
    regions = [outer]
    n = int(rng.integers(n_regions[0], n_regions[1] + 1))
    for _ in range(n - 1):
        # keep inner compartments within the outer ellipse's bounding region
        r = np.sqrt(rng.uniform(0.0, 1.0)) * 0.55
        theta = rng.uniform(0.0, 2 * np.pi)
        center = (
            outer.center[0] + r * outer.semi_axes[0] * np.sin(theta),
            outer.center[1] + r * outer.semi_axes[1] * np.cos(theta),
        )
        semi = (height * rng.uniform(0.04, 0.14), width * rng.uniform(0.04, 0.14))
        regions.append(Ellipse(center, semi, tissue(), float(rng.uniform(0.0, np.pi))))
    return PhantomSpec(height, width, tuple(regions))


def make_coil_maps(n_coils: int, height: int, width: int, seed: int) -> np.ndarray:
    """Smooth complex receive sensitivities (C, H, W) with sum_c |S_c|^2 = 1."""
    if n_coils < 1:
        raise ValueError("need at least one coil")
    rng = RngStream(seed, "coil")
    rows, cols = np.mgrid[0:height, 0:width].astype(float)
    yn = rows / max(height - 1, 1) - 0.5
    xn = cols / max(width - 1, 1) - 0.5
    offset = rng.uniform(0, 2 * np.pi)
    maps = np.empty((n_coils, height, width), dtype=np.complex128)
    for c in range(n_coils):
        theta = offset + 2 * np.pi * c / n_coils
        # lobe centred just outside the image border at angle theta
        py, px = 0.6 * np.sin(theta), 0.6 * np.cos(theta)
        width_c = rng.uniform(0.35, 0.5)
        mag = np.exp(-((yn - py) ** 2 + (xn - px) ** 2) / (2 * width_c**2))
        gy, gx = rng.uniform(-np.pi, np.pi, 2)
        phase = gy * yn + gx * xn + rng.uniform(0, 2 * np.pi)
        maps[c] = mag * np.exp(1j * phase)
    norm = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / norm


def background_phase(height: int, width: int, seed: int) -> np.ndarray:
    """Smooth unit-modulus phase field shared by all contrast phases."""
    rng = RngStream(seed, "phase")
    rows, cols = np.mgrid[0:height, 0:width].astype(float)
    yn = rows / max(height - 1, 1) - 0.5
    xn = cols / max(width - 1, 1) - 0.5
    c = rng.uniform(-1.0, 1.0, 6) * np.array([np.pi, 1.5, 1.5, 1.0, 1.0, 1.0])
    phi = c[0] + c[1] * yn + c[2] * xn + c[3] * yn * yn + c[4] * xn * xn + c[5] * xn * yn
    return np.exp(1j * phi)


def phase_signals(t1_map, t2_map, pd_map, preset: SequencePreset) -> np.ndarray:
    """Magnitude signal per phase, shape (P, H, W)."""
    t = np.asarray(preset.timings, dtype=float)[:, None, None]
    if preset.kind == "T2prep":
        return t2prep_signal(pd_map[None], t2_map[None], t)
    ratio = preset.inversion_ratio
    a = pd_map
    b = ratio * pd_map
    t1star = t1_map / (ratio - 1.0)
    return molli_signal(a[None], b[None], t1star[None], t)


def simulate_phases(
    t1_map,
    t2_map,
    pd_map,
    preset: SequencePreset,
    noise_snr: float | None = None,
    seed: int = 0,
    with_phase: bool = True,
) -> np.ndarray:
    """Complex multi-phase image (P, H, W).

    The shared background phase multiplies every phase identically. With
    ``noise_snr`` set, complex Gaussian noise of std (mean foreground phase-0
    magnitude) / SNR is added in image space.
    """
    t1_map, t2_map, pd_map = (np.asarray(m, dtype=float) for m in (t1_map, t2_map, pd_map))
    if not (t1_map.shape == t2_map.shape == pd_map.shape):
        raise ValueError("parameter maps must share a shape")
    mag = phase_signals(t1_map, t2_map, pd_map, preset)
    img = mag.astype(np.complex128)
    if with_phase:
        img = img * background_phase(*pd_map.shape, seed)[None]
    if noise_snr is not None:
        sigma = noise_sigma(mag[0], pd_map > 0, noise_snr)
        rng = RngStream(seed, "noise", 1)
        img = img + sigma * (rng.normal(img.shape) + 1j * rng.normal(img.shape)) / np.sqrt(2)
    return img


def noise_sigma(phase0_magnitude, foreground, snr: float) -> float:
    if snr <= 0:
        raise ValueError("SNR must be positive")
    fg = np.asarray(foreground, dtype=bool)
    if not fg.any():
        return 0.0
    return float(np.mean(np.abs(phase0_magnitude)[fg]) / snr)
