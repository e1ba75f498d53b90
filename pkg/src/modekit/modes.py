"""Coherent-mode decomposition of a flattened ``|G1|`` matrix.

The discrete eigenproblem carries the pixel area ``dA``: an eigenpair
``(mu, v)`` of the matrix gives the mode weight ``lambda = mu * dA`` and the
profile ``u = v / sqrt(dA)``, so that ``sum |u|^2 dA = 1`` and
``<I> = sum lambda |u|^2`` hold in physical units.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import eigsh

from .core import (
    DegenerateError,
    FlatCovariance,
    PixelGrid,
    ShapeError,
    ValidationError,
    check_symmetric,
    require_same_grid,
)
from .stats import MeanIntensity

log = logging.getLogger(__name__)

DEFAULT_MAX_PIXELS = 16384
DENSE_LIMIT = 4096
DEFAULT_TOP_K = 200
EIG_EPS = 1e-9


class ClampWarning(RuntimeWarning):
    """Negative eigenvalues carried a noticeable share of the trace."""


@dataclass(eq=False)
class ModeSet:
    """Mode weights (descending) and real 2D profiles on a common grid.

    ``profiles`` has shape ``(M, ny, nx)``. Under ``"unit_l2_modes"`` each
    profile satisfies ``sum u^2 dx dy = 1``.
    """

    grid: PixelGrid
    weights: np.ndarray
    profiles: np.ndarray
    normalization: str = "unit_l2_modes"
    clamped_count: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.profiles = np.asarray(self.profiles)
        m = self.weights.shape[0]
        if self.profiles.shape != (m,) + self.grid.shape:
            raise ShapeError(f"profiles must have shape ({m}, {self.grid.ny}, {self.grid.nx}), got {self.profiles.shape}")
        if self.normalization not in ("unit_l2_modes", "weights_sum_to_one"):
            raise ValidationError(f"unknown normalization {self.normalization!r}")
        if m and np.any(np.diff(self.weights) > EIG_EPS * max(abs(self.weights[0]), 1e-300)):
            raise ValidationError("mode weights must be sorted in descending order")
        if m and self.weights.min() < -EIG_EPS * max(self.weights[0], 0.0):
            raise ValidationError("mode weights must be non-negative")

    def __len__(self) -> int:
        return self.weights.shape[0]

    def vectors(self) -> np.ndarray:
        """Profiles unfolded to an ``(M, N)`` array."""
        return self.profiles.reshape(len(self), -1)

    def gram(self) -> np.ndarray:
        v = self.vectors()
        return (v @ v.T) * self.grid.pixel_area

    def g1_matrix(self) -> np.ndarray:
        """Reassemble ``sum_m lambda_m u_m u_m^T`` in flattened form."""
        v = self.vectors()
        return (v.T * self.weights) @ v

    def truncated(self, count: int) -> "ModeSet":
        return ModeSet(self.grid, self.weights[:count], self.profiles[:count], self.normalization, self.clamped_count)


def fix_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude entry is positive (in place)."""
    rows = np.arange(vectors.shape[0])
    peak = vectors[rows, np.argmax(np.abs(vectors), axis=1)]
    vectors *= np.where(peak < 0, -1.0, 1.0)[:, None]
    return vectors


def decompose(g1: FlatCovariance, n_modes: Optional[int] = None, method: str = "auto",
              max_pixels: int = DEFAULT_MAX_PIXELS, overwrite: bool = False) -> ModeSet:
    """Eigen-decompose a flattened ``|G1|`` into coherent modes.

    Parameters
    ----------
    g1 : FlatCovariance
        Symmetric matrix; any kind is accepted but ``ABS_G1`` is the usual input.
    n_modes : int, optional
        Number of modes to keep. Defaults to all of them for the dense solver
        and to 200 for the iterative one.
    method : {"auto", "dense", "topk"}
        ``"auto"`` uses the dense LAPACK solver up to 4096 pixels and the
        Lanczos top-k solver beyond.
    overwrite : bool
        Let the dense solver destroy ``g1.data`` to avoid a copy.

    Negative eigenvalues are clamped to zero and counted in
    ``clamped_count``; a :class:`ClampWarning` is issued if the clamped mass
    exceeds 0.1% of the trace.
    """
    a = g1.data
    n = g1.grid.n_pixels
    if n > max_pixels:
        raise ValidationError(f"{n} pixels exceeds the configured maximum of {max_pixels}; crop or bin the frames")
    check_symmetric(a)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "topk"
    if method not in ("dense", "topk"):
        raise ValueError(f"unknown method {method!r}")
    trace = float(np.trace(a))

    if method == "dense":
        # symmetric, so the F-ordered transpose is the same matrix without a copy
        mat = a.T if a.flags.c_contiguous else a
        mu, v = scipy.linalg.eigh(mat, overwrite_a=overwrite, check_finite=False)
        mu, v = mu[::-1], v[:, ::-1]
        if n_modes is not None:
            mu, v = mu[:n_modes], v[:, :n_modes]
        negative_mass = float(-mu[mu < 0].sum())
    else:
        k = DEFAULT_TOP_K if n_modes is None else n_modes
        k = min(k, n - 1)
        mu, v = eigsh(a, k=k, which="LA")
        order = np.argsort(mu)[::-1]
        mu, v = mu[order], v[:, order]
        # the spectrum beyond k is unknown; the trace bounds what is missing
        negative_mass = float(-mu[mu < 0].sum())

    clamped = int(np.count_nonzero(mu < 0))
    if negative_mass > 1e-3 * abs(trace):
        warnings.warn(f"clamped negative eigenvalues carry {negative_mass / max(abs(trace), 1e-300):.2%} of the trace",
                      ClampWarning, stacklevel=2)
    mu = np.maximum(mu, 0.0)
    dA = g1.grid.pixel_area
    vectors = fix_sign(np.ascontiguousarray(v.T)) / np.sqrt(dA)
    profiles = vectors.reshape(-1, g1.grid.ny, g1.grid.nx)
    return ModeSet(g1.grid, mu * dA, profiles, "unit_l2_modes", clamped)


def schmidt_number(modes, truncate: Optional[int] = None) -> float:
    """Effective number of modes ``(sum w)^2 / sum w^2``.

    Accepts a :class:`ModeSet` or a plain sequence of weights. ``truncate``
    restricts the sums to the first ``truncate`` weights.
    """
    w = modes.weights if isinstance(modes, ModeSet) else np.asarray(modes, dtype=float)
    if truncate is not None:
        w = w[:truncate]
    s2 = float(np.sum(w ** 2))
    if s2 == 0:
        raise DegenerateError("all mode weights are zero")
    return float(np.sum(w)) ** 2 / s2


def reconstruct_intensity(modes: ModeSet, n_modes: int) -> MeanIntensity:
    """Mean intensity from the first ``n_modes`` modes: ``sum lambda |u|^2``."""
    if not 1 <= n_modes <= len(modes):
        raise ValueError(f"n_modes must be in [1, {len(modes)}], got {n_modes}")
    w = modes.weights[:n_modes]
    p = modes.profiles[:n_modes]
    return MeanIntensity(modes.grid, np.einsum("m,myx->yx", w, p * p))


def fidelity(u_a, u_b, grid: PixelGrid) -> float:
    """Overlap ``|sum u_a u_b dx dy|`` of two unit-norm profiles.

    The absolute value absorbs the arbitrary sign of eigenvectors.
    """
    u_a, u_b = np.asarray(u_a), np.asarray(u_b)
    if u_a.shape != grid.shape or u_b.shape != grid.shape:
        raise ShapeError(f"profiles must both have shape {grid.shape}, got {u_a.shape} and {u_b.shape}")
    return abs(float(np.vdot(u_a, u_b))) * grid.pixel_area


def fidelity_matrix(a: ModeSet, b: ModeSet, count_a: Optional[int] = None,
                    count_b: Optional[int] = None) -> np.ndarray:
    require_same_grid(a.grid, b.grid, "mode sets")
    va = a.vectors()[:count_a]
    vb = b.vectors()[:count_b]
    return np.abs(va @ vb.T) * a.grid.pixel_area


def match_modes(a: ModeSet, b: ModeSet, count: int) -> list[tuple[int, int, float]]:
    """Greedy pairing of the first ``count`` modes of two sets by ``|fidelity|``.

    The globally best remaining pair is taken first and both indices are
    retired, so mode-order swaps between the sets are followed. Returns
    ``(index_a, index_b, fidelity)`` sorted by ``index_a``.
    """
    if count < 1 or count > len(a) or count > len(b):
        raise ValueError(f"count {count} exceeds the mode sets ({len(a)}, {len(b)})")
    f = fidelity_matrix(a, b, count, count)
    work = f.copy()
    pairs = []
    for _ in range(count):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        pairs.append((int(i), int(j), float(f[i, j])))
        work[i, :] = -1.0
        work[:, j] = -1.0
    return sorted(pairs)


def best_overlaps(truth: ModeSet, found: ModeSet, count_found: Optional[int] = None) -> np.ndarray:
    """For each mode of ``truth``, the largest fidelity with any mode of ``found``."""
    return fidelity_matrix(truth, found, None, count_found).max(axis=1)


def exponential_fit(weights: Sequence[float], count: int) -> tuple[float, float, float]:
    """Least-squares fit ``log w_m = a + b m`` over the first ``count`` weights.

    Returns ``(rate, intercept, r_squared)`` where ``rate = -b``.
    """
    w = np.asarray(weights[:count], dtype=float)
    if np.any(w <= 0):
        raise ValueError("exponential fit needs positive weights")
    m = np.arange(w.size)
    y = np.log(w)
    b, a = np.polyfit(m, y, 1)
    resid = y - (a + b * m)
    r2 = 1.0 - resid.var() / y.var()
    return -b, a, r2
