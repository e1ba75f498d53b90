"""Pseudo-thermal frames drawn from a known set of coherent modes.

Each frame is ``I = |sum_m c_m u_m|^2`` with independent circular complex
Gaussian coefficients, ``<c_m c_k*> = lambda_m delta_mk``. This is the only
stationary field statistics for which the Siegert relation holds, so the
sampled stacks are the ground truth for the reconstruction pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.hermite import hermval

from .core import FrameStack, PixelGrid, ValidationError
from .modes import ModeSet


@dataclass(frozen=True)
class SynthConfig:
    """Sampling parameters.

    ``photon_scale`` is the mean photon number per frame; when set, frames are
    in photons per pixel. Shot noise resamples each pixel as Poisson and
    needs ``photon_scale``. ``dark_sigma`` adds Gaussian read noise in the
    output units; the result is clipped at zero like a camera would.
    """

    modes: ModeSet
    frames: int = 3000
    seed: int = 0
    photon_scale: Optional[float] = None
    shot_noise: bool = False
    dark_sigma: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.frames < 2:
            raise ValidationError("need at least 2 frames")
        if np.any(self.modes.weights <= 0):
            raise ValidationError("generator mode weights must be positive")
        if self.photon_scale is not None and not self.photon_scale > 0:
            raise ValidationError("photon_scale must be positive")
        if self.shot_noise and self.photon_scale is None:
            raise ValidationError("shot noise needs photon_scale")
        if self.dark_sigma < 0:
            raise ValidationError("dark_sigma must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must fit in 64 bits")


def frame_rng(seed: int, t: int) -> np.random.Generator:
    """Independent counter-based stream for frame ``t``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(t,))))


def sample_frames(cfg: SynthConfig, out: Optional[np.ndarray] = None) -> FrameStack:
    """Draw ``cfg.frames`` intensity frames.

    Frame ``t`` only depends on ``(seed, t)``, so the output is reproducible
    bit for bit and independent of how the work is split. ``out`` may be a
    preallocated ``(T, ny, nx)`` array (e.g. a memmap) to write into.
    """
    modes = cfg.modes
    grid = modes.grid
    basis = modes.vectors().astype(np.float64)
    amp = np.sqrt(modes.weights / 2.0)
    T = cfg.frames
    if out is None:
        out = np.empty((T,) + grid.shape, dtype=cfg.dtype)
    elif out.shape != (T,) + grid.shape:
        raise ValidationError(f"out has shape {out.shape}, expected {(T,) + grid.shape}")
    to_counts = None
    if cfg.photon_scale is not None:
        to_counts = cfg.photon_scale * grid.pixel_area / float(modes.weights.sum())
    m = len(modes)
    for t in range(T):
        rng = frame_rng(cfg.seed, t)
        g = rng.standard_normal((2, m))
        c = (g[0] + 1j * g[1]) * amp
        field = c @ basis
        frame = field.real ** 2 + field.imag ** 2
        if to_counts is not None:
            frame *= to_counts
            if cfg.shot_noise:
                frame = rng.poisson(frame).astype(np.float64)
        if cfg.dark_sigma > 0:
            frame += rng.normal(0.0, cfg.dark_sigma, frame.shape)
            np.maximum(frame, 0.0, out=frame)
        out[t] = frame.reshape(grid.shape)
    return FrameStack(grid, out, validate=False)


def hermite_gauss_1d(n: int, x, waist: float):
    """Unnormalized HG_n(x) = H_n(sqrt(2) x / w) exp(-x^2 / w^2)."""
    c = np.zeros(n + 1)
    c[n] = 1.0
    x = np.asarray(x, dtype=float)
    return hermval(np.sqrt(2) * x / waist, c) * np.exp(-(x / waist) ** 2)


def hg_indices(count: int) -> list[tuple[int, int]]:
    """First ``count`` HG index pairs ``(nx, ny)`` by total order, x-major within an order."""
    out = []
    order = 0
    while len(out) < count:
        out.extend((order - k, k) for k in range(order + 1))
        order += 1
    return out[:count]


def hermite_gauss_modeset(grid: PixelGrid, waist: float, weights: Sequence[float],
                          indices: Optional[Sequence[tuple[int, int]]] = None,
                          waist_y: Optional[float] = None) -> ModeSet:
    """Hermite-Gauss profiles centred on the grid origin with the given weights.

    Profiles are normalized on the grid; choose the waist so the highest
    order fits inside it, or they will not be orthogonal.
    """
    weights = np.asarray(weights, dtype=float)
    indices = list(indices) if indices is not None else hg_indices(weights.size)
    wy = waist if waist_y is None else waist_y
    profiles = []
    for nx_, ny_ in indices:
        u = np.outer(hermite_gauss_1d(ny_, grid.y, wy), hermite_gauss_1d(nx_, grid.x, waist))
        profiles.append(u / np.sqrt(np.sum(u * u) * grid.pixel_area))
    return ModeSet(grid, weights, np.array(profiles))


def exponential_weights(count: int, scale: float = 10.0) -> np.ndarray:
    """``exp(-m / scale)`` for ``m = 1..count``."""
    return np.exp(-np.arange(1, count + 1) / scale)


def power_law_weights(count: int, exponent: float = 1.0) -> np.ndarray:
    """``m^-exponent`` for ``m = 1..count``."""
    return np.arange(1, count + 1, dtype=float) ** -exponent
