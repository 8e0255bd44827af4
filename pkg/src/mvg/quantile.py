"""Adaptive depth segmentation via FFT-accelerated Gaussian KDE.

Depth samples are binned linearly onto a uniform grid, convolved with a
Gaussian kernel through an FFT (zero-padded, so no wrap-around), and
normalized to a density.  Quantiles of the resulting CDF split a depth
map into near / mid / far regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, DegenerateDistributionError, DomainError
from .maps import DepthMap

MAX_KDE_SAMPLES = 1 << 20  # larger maps are uniformly subsampled


@dataclass(frozen=True)
class KdeConfig:
    grid_size: int = 1024
    bandwidth: object = "silverman"  # meters, or the string "silverman"
    p_near: float = 0.15
    p_far: float = 0.85

    def __post_init__(self):
        g = self.grid_size
        if g < 2 or (g & (g - 1)) != 0:
            raise ConfigError(f"grid_size must be a power of two >= 2, got {g}")
        if not (0.0 < self.p_near < self.p_far < 1.0):
            raise ConfigError(
                f"need 0 < p_near < p_far < 1, got ({self.p_near}, {self.p_far})"
            )
        if not isinstance(self.bandwidth, str):
            if not (float(self.bandwidth) > 0):
                raise ConfigError("explicit bandwidth must be positive")
        elif self.bandwidth != "silverman":
            raise ConfigError(f"unknown bandwidth rule {self.bandwidth!r}")


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray      # uniform sample positions, meters
    density: np.ndarray   # nonnegative, integrates to 1 (trapezoid)
    bandwidth: float

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


@dataclass(frozen=True)
class DepthSegmentation:
    near_mask: np.ndarray
    mid_mask: np.ndarray
    far_mask: np.ndarray
    q_near: float
    q_far: float
    density: DensityCurve | None
    cdf: np.ndarray | None
    degenerate: bool = False


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    return 1.06 * sd * n ** (-0.2)


def _resolve_bandwidth(samples: np.ndarray, cfg: KdeConfig) -> float:
    if isinstance(cfg.bandwidth, str):
        return silverman_bandwidth(samples)
    return float(cfg.bandwidth)


def kde_fft(depths: np.ndarray, cfg: KdeConfig = KdeConfig()) -> DensityCurve:
    """Gaussian KDE of the samples on a uniform grid, via FFT convolution.

    Raises DegenerateDistributionError when every sample is identical
    (no spread, no meaningful density).
    """
    s = np.asarray(depths, dtype=np.float64).ravel()
    if s.size < 2:
        raise DomainError(f"need at least 2 samples, got {s.size}")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise DomainError("samples must be finite and positive")
    lo_s, hi_s = float(s.min()), float(s.max())
    if lo_s == hi_s:
        raise DegenerateDistributionError(lo_s)
    h = _resolve_bandwidth(s, cfg)
    if h <= 0:
        raise DegenerateDistributionError(lo_s)

    g = cfg.grid_size
    grid = np.linspace(lo_s - 3.0 * h, hi_s + 3.0 * h, g)
    delta = (grid[-1] - grid[0]) / (g - 1)

    # linear binning: each sample splits its weight between bracketing nodes
    f = (s - grid[0]) / delta
    i0 = np.floor(f).astype(np.int64)
    frac = f - i0
    hist = np.zeros(g)
    np.add.at(hist, np.clip(i0, 0, g - 1), 1.0 - frac)
    np.add.at(hist, np.clip(i0 + 1, 0, g - 1), frac)

    # Gaussian taps over every grid offset; fftconvolve zero-pads, so the
    # circular convolution never wraps
    offsets = np.arange(-(g - 1), g, dtype=np.float64) * delta
    kernel = np.exp(-0.5 * (offsets / h) ** 2)
    dens = fftconvolve(hist, kernel, mode="same")
    dens = np.maximum(dens, 0.0)  # FFT roundoff can leave tiny negatives
    total = np.trapz(dens, grid)
    if total <= 0:
        raise DegenerateDistributionError(lo_s)
    return DensityCurve(grid=grid, density=dens / total, bandwidth=h)


def cdf_from_density(curve: DensityCurve) -> np.ndarray:
    """Cumulative trapezoid integral of the density, clamped to [0, 1]."""
    d = curve.density
    steps = 0.5 * (d[1:] + d[:-1]) * np.diff(curve.grid)
    cdf = np.concatenate([[0.0], np.cumsum(steps)])
    cdf = np.clip(cdf, 0.0, 1.0)
    return np.maximum.accumulate(cdf)


def quantile(cdf: np.ndarray, grid: np.ndarray, p: float) -> float:
    """Invert the sampled CDF at probability p by linear interpolation.

    Flat CDF segments resolve to the leftmost bracketing node.
    """
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p}")
    idx = int(np.searchsorted(cdf, p, side="left"))
    if idx <= 0:
        return float(grid[0])
    if idx >= len(cdf):
        return float(grid[-1])
    c0, c1 = cdf[idx - 1], cdf[idx]
    if c1 <= c0:
        return float(grid[idx])
    t = (p - c0) / (c1 - c0)
    return float(grid[idx - 1] + t * (grid[idx] - grid[idx - 1]))


def depth_quantiles(samples: np.ndarray, probs, cfg: KdeConfig = KdeConfig()):
    """KDE-based quantiles of a sample set; degenerate samples collapse
    every quantile to the common value."""
    try:
        curve = kde_fft(samples, cfg)
    except DegenerateDistributionError as exc:
        return [exc.value for _ in probs]
    cdf = cdf_from_density(curve)
    return [quantile(cdf, curve.grid, p) for p in probs]


def subsample_depths(values: np.ndarray, limit: int = MAX_KDE_SAMPLES) -> np.ndarray:
    """Deterministic uniform thinning of a 1D sample array."""
    if values.size <= limit:
        return values
    idx = (np.arange(limit, dtype=np.int64) * values.size) // limit
    return values[idx]


def segment_depth(d: DepthMap, cfg: KdeConfig = KdeConfig()) -> DepthSegmentation:
    """Split a depth map into near / mid / far regions at KDE quantiles.

    The three masks partition the valid pixels; invalid pixels belong to
    no region.  A degenerate (constant) map is entirely mid.
    """
    valid = d.mask
    vals = d.values[valid]
    if vals.size < 2:
        raise DomainError("need at least 2 valid pixels to segment")
    samples = subsample_depths(vals)
    try:
        curve = kde_fft(samples, cfg)
    except DegenerateDistributionError as exc:
        zeros = np.zeros_like(valid)
        return DepthSegmentation(
            near_mask=zeros, mid_mask=valid.copy(), far_mask=zeros.copy(),
            q_near=exc.value, q_far=exc.value, density=None, cdf=None,
            degenerate=True,
        )
    cdf = cdf_from_density(curve)
    q_near = quantile(cdf, curve.grid, cfg.p_near)
    q_far = quantile(cdf, curve.grid, cfg.p_far)
    near = valid & (d.values <= q_near)
    far = valid & (d.values >= q_far) & ~near
    mid = valid & ~near & ~far
    return DepthSegmentation(
        near_mask=near, mid_mask=mid, far_mask=far,
        q_near=q_near, q_far=q_far, density=curve, cdf=cdf,
    )
