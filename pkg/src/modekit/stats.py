"""Intensity statistics: mean, pixel-pair covariance and Siegert inversion.

For thermal light the intensity covariance equals ``|G1|^2`` (plus a
diagonal shot-noise term), so ``|G1| = sqrt(Cov)`` once the shot noise is
removed. Negative covariance entries, which appear after per-frame
normalization and from sampling noise, are mapped to zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import blas

from .core import (
    CovKind,
    DegenerateError,
    FlatCovariance,
    FrameStack,
    InsufficientDataError,
    PixelGrid,
    ShapeError,
    ValidationError,
    require_same_grid,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.02


@dataclass(frozen=True)
class NoFilter:
    pass


@dataclass(frozen=True)
class Threshold:
    """Zero ``|G1|`` entries below ``level * max``."""

    level: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not (np.isfinite(self.level) and self.level >= 0):
            raise ValidationError(f"threshold level must be finite and >= 0, got {self.level}")


@dataclass(frozen=True)
class DarkCov:
    """Subtract the covariance of dark frames before the square root."""

    dark: FrameStack


NoiseFilter = Union[NoFilter, Threshold, DarkCov]


@dataclass(frozen=True)
class StatsConfig:
    normalize_integral: bool = False
    subtract_shot_noise: bool = False
    shot_noise_scale: float = 0.0
    noise_filter: NoiseFilter = field(default_factory=Threshold)
    chunk: int = 64

    def __post_init__(self):
        if self.shot_noise_scale < 0:
            raise ValidationError("shot_noise_scale must be >= 0")
        if self.chunk < 1:
            raise ValidationError("chunk must be >= 1")

    @classmethod
    def for_pdc(cls, **kw) -> "StatsConfig":
        # Pulse-to-pulse pump power noise otherwise dominates the first mode.
        kw.setdefault("normalize_integral", True)
        return cls(**kw)

    @classmethod
    def for_fiber(cls, **kw) -> "StatsConfig":
        kw.setdefault("normalize_integral", False)
        return cls(**kw)


@dataclass(frozen=True)
class MeanIntensity:
    grid: PixelGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ShapeError(f"mean intensity shape {self.values.shape} does not match grid {self.grid.shape}")


def _prepared_chunks(stack: FrameStack, cfg: StatsConfig):
    n = stack.grid.n_pixels
    for start, chunk in stack.iter_chunks(cfg.chunk):
        x = chunk.reshape(chunk.shape[0], n)
        if cfg.normalize_integral:
            totals = x.sum(axis=1)
            bad = np.flatnonzero(totals <= 0)
            if bad.size:
                raise DegenerateError(
                    f"frame {stack.label(start + int(bad[0]))} has zero total intensity; cannot normalize")
            x /= totals[:, None]
        yield x


def mean_intensity(stack: FrameStack, cfg: StatsConfig = StatsConfig()) -> MeanIntensity:
    """Pixel-wise mean of the (optionally integral-normalized) frames."""
    if stack.n_frames < 1:
        raise InsufficientDataError("mean intensity needs at least one frame")
    total = np.zeros(stack.grid.n_pixels)
    for x in _prepared_chunks(stack, cfg):
        total += x.sum(axis=0)
    return MeanIntensity(stack.grid, (total / stack.n_frames).reshape(stack.grid.shape))


def mirror_upper(a: np.ndarray, block: int = 512) -> None:
    """Copy the upper triangle of a square Fortran-ordered array onto its lower one, in place."""
    n = a.shape[0]
    for i in range(0, n, block):
        j = min(i + block, n)
        diag = a[i:j, i:j]
        diag[...] = np.triu(diag) + np.triu(diag, 1).T
        if j < n:
            a[j:, i:j] = a[i:j, j:].T


def streaming_moments(stack: FrameStack, cfg: StatsConfig = StatsConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and unbiased covariance matrix in one pass over the frames.

    Frames are shifted by the first frame before accumulation so that large
    common offsets do not cancel catastrophically. Each chunk of B frames is
    a rank-B symmetric update (BLAS ``dsyrk``) into a single ``N x N`` buffer;
    with ``cfg.chunk == 1`` this is the plain rank-1 recursion. Apart from
    that buffer, memory use is O(chunk * N).

    The returned covariance is a C-contiguous view of the Fortran-ordered
    accumulator, which is valid because the matrix is symmetric.
    """
    T = stack.n_frames
    if T < 2:
        raise InsufficientDataError(f"covariance needs at least 2 frames, got {T}")
    n = stack.grid.n_pixels
    acc = np.zeros((n, n), order="F")
    shift_sum = np.zeros(n)
    ref = None
    for x in _prepared_chunks(stack, cfg):
        if ref is None:
            ref = x[0].copy()
        x -= ref
        shift_sum += x.sum(axis=0)
        acc = blas.dsyrk(1.0, x, beta=1.0, c=acc, trans=1, lower=0, overwrite_c=1)
    mean_shift = shift_sum / T
    acc = blas.dsyr(-float(T), mean_shift, a=acc, lower=0, overwrite_a=1)
    acc *= 1.0 / (T - 1)
    mirror_upper(acc)
    return ref + mean_shift, acc.T


def covariance(stack: FrameStack, cfg: StatsConfig = StatsConfig()) -> FlatCovariance:
    """Unbiased sample covariance of pixel intensities, ``N x N`` row-major."""
    _, cov = streaming_moments(stack, cfg)
    return FlatCovariance(stack.grid, cov, CovKind.COVARIANCE)


def _subtract_dark(data: np.ndarray, grid: PixelGrid, cfg: StatsConfig) -> None:
    dark = cfg.noise_filter.dark
    require_same_grid(grid, dark.grid, "dark stack and data")
    _, dark_cov = streaming_moments(dark, cfg)
    data -= dark_cov


def siegert_invert(cov: FlatCovariance, mean: MeanIntensity, cfg: StatsConfig = StatsConfig(),
                   inplace: bool = False) -> FlatCovariance:
    """``|G1| = Re sqrt(Cov - shot)`` entrywise.

    The shot-noise term ``shot_noise_scale * <I(rho_n)>`` is removed from the
    diagonal when ``cfg.subtract_shot_noise`` is set; with a :class:`DarkCov`
    filter the dark-frame covariance is subtracted here as well. Entries whose
    radicand is negative become 0; their share of all entries is stored in
    ``clamped_fraction``.

    With ``inplace=True`` the covariance buffer is overwritten, which keeps
    peak memory at one matrix for large grids.
    """
    if cov.kind is not CovKind.COVARIANCE:
        raise ValidationError("siegert_invert expects an intensity covariance")
    require_same_grid(cov.grid, mean.grid, "covariance and mean intensity")
    data = cov.data if inplace else cov.data.copy()
    dark = isinstance(cfg.noise_filter, DarkCov)
    if dark:
        _subtract_dark(data, cov.grid, cfg)
    if cfg.subtract_shot_noise:
        idx = np.arange(data.shape[0])
        data[idx, idx] -= cfg.shot_noise_scale * mean.values.reshape(-1)
    negative = 0
    for i in range(0, data.shape[0], 1024):
        rows = data[i:i + 1024]
        negative += int(np.count_nonzero(rows < 0))
        np.maximum(rows, 0.0, out=rows)
        np.sqrt(rows, out=rows)
    frac = negative / data.size
    log.debug("siegert_invert: %.4f of entries clamped", frac)
    return FlatCovariance(cov.grid, data, CovKind.ABS_G1, clamped_fraction=frac, dark_subtracted=dark)


def denoise(g1: FlatCovariance, cfg: StatsConfig = StatsConfig(), inplace: bool = False) -> FlatCovariance:
    """Apply the configured noise filter to a ``|G1|`` matrix.

    A relative threshold zeroes every entry below ``level * max``. Dark-frame
    subtraction has to happen before the square root, so in that mode this
    only checks that :func:`siegert_invert` already did it.
    """
    if g1.kind is not CovKind.ABS_G1:
        raise ValidationError("denoise expects a |G1| matrix")
    flt = cfg.noise_filter
    if isinstance(flt, DarkCov):
        require_same_grid(g1.grid, flt.dark.grid, "dark stack and data")
        if not g1.dark_subtracted:
            raise ValidationError("dark covariance must be subtracted before Siegert inversion")
        return g1
    if isinstance(flt, NoFilter) or flt.level == 0:
        return g1
    data = g1.data if inplace else g1.data.copy()
    cut = flt.level * float(data.max())
    for i in range(0, data.shape[0], 1024):
        rows = data[i:i + 1024]
        rows[rows < cut] = 0.0
    return FlatCovariance(g1.grid, data, CovKind.ABS_G1, g1.clamped_fraction, g1.dark_subtracted, dict(g1.meta))
