"""Pixel grids, frame stacks and the 4D <-> 2D flattening used everywhere else.

Pixels are numbered row-major: ``n = iy * nx + ix`` (y outer, x inner). A
two-point function ``T(rho_n, rho_m)`` sampled on the grid is stored as an
``N x N`` matrix in that numbering, and eigenvectors of such a matrix are
folded back to ``ny x nx`` images with :func:`fold_vector`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UNITS = ("m", "rad")


class ShapeError(ValueError):
    """Array shape or grid does not match what the operation expects."""


class InsufficientDataError(ValueError):
    pass


class DegenerateError(ValueError):
    """Input carries no usable signal (zero-total frame, all-zero weights, ...)."""


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class PixelGrid:
    """Rectangular pixel grid with physical coordinates.

    ``x0, y0`` is the centre of pixel ``(ix=0, iy=0)``; ``dx, dy`` the pitch.
    ``unit`` is ``"m"`` for near-field data and ``"rad"`` for far-field
    external angles.
    """

    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0
    x0: float = 0.0
    y0: float = 0.0
    unit: str = "m"

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValidationError("nx and ny must be integers")
        if self.nx < 1 or self.ny < 1:
            raise ValidationError(f"grid must have nx, ny >= 1, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValidationError(f"pixel pitch must be positive, got dx={self.dx}, dy={self.dy}")
        if self.unit not in UNITS:
            raise ValidationError(f"unknown unit {self.unit!r}; expected one of {UNITS}")

    @classmethod
    def centered(cls, nx: int, ny: int, dx: float, dy: Optional[float] = None, unit: str = "m") -> "PixelGrid":
        """Grid whose physical origin sits at the array centre."""
        dy = dx if dy is None else dy
        return cls(nx, ny, dx, dy, -0.5 * (nx - 1) * dx, -0.5 * (ny - 1) * dy, unit)

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def pixel_area(self) -> float:
        return self.dx * self.dy

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)

    def compatible(self, other: "PixelGrid", rtol: float = 1e-9) -> bool:
        if (self.nx, self.ny, self.unit) != (other.nx, other.ny, other.unit):
            return False
        a = np.array([self.dx, self.dy, self.x0, self.y0])
        b = np.array([other.dx, other.dy, other.x0, other.y0])
        scale = max(self.dx * self.nx, self.dy * self.ny)
        return bool(np.all(np.abs(a - b) <= rtol * scale))


def require_same_grid(a: PixelGrid, b: PixelGrid, what: str = "inputs") -> None:
    if not a.compatible(b):
        raise ShapeError(f"{what} live on different grids: {a} vs {b}")


def flat_index(grid: PixelGrid, ix: int, iy: int) -> int:
    """Row-major flat index of pixel ``(ix, iy)``."""
    if not (0 <= ix < grid.nx and 0 <= iy < grid.ny):
        raise IndexError(f"pixel ({ix}, {iy}) outside {grid.nx}x{grid.ny} grid")
    return iy * grid.nx + ix


def unflat_index(grid: PixelGrid, n: int) -> tuple[int, int]:
    """Inverse of :func:`flat_index`; returns ``(ix, iy)``."""
    if not (0 <= n < grid.n_pixels):
        raise IndexError(f"flat index {n} outside [0, {grid.n_pixels})")
    iy, ix = divmod(n, grid.nx)
    return ix, iy


def fold_vector(grid: PixelGrid, v) -> np.ndarray:
    """Reshape a length-N vector into the ``ny x nx`` image it came from."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != grid.n_pixels:
        raise ShapeError(f"expected vector of length {grid.n_pixels}, got shape {v.shape}")
    return v.reshape(grid.ny, grid.nx)


def unfold_image(grid: PixelGrid, image) -> np.ndarray:
    image = np.asarray(image)
    if image.shape != grid.shape:
        raise ShapeError(f"expected image of shape {grid.shape}, got {image.shape}")
    return image.reshape(grid.n_pixels)


def flatten_pair_tensor(tensor) -> np.ndarray:
    """Matricize a ``(ny, nx, ny, nx)`` two-point tensor into ``N x N``.

    ``out[n, m] = tensor[iy_n, ix_n, iy_m, ix_m]`` with row-major ``n, m``.
    """
    tensor = np.asarray(tensor)
    if tensor.ndim != 4 or tensor.shape[:2] != tensor.shape[2:]:
        raise ShapeError(f"expected (ny, nx, ny, nx) tensor, got {tensor.shape}")
    ny, nx = tensor.shape[:2]
    return tensor.reshape(ny * nx, ny * nx)


def unflatten_pair_matrix(grid: PixelGrid, matrix) -> np.ndarray:
    matrix = np.asarray(matrix)
    n = grid.n_pixels
    if matrix.shape != (n, n):
        raise ShapeError(f"expected ({n}, {n}) matrix, got {matrix.shape}")
    return matrix.reshape(grid.ny, grid.nx, grid.ny, grid.nx)


@dataclass
class FrameStack:
    """T same-shaped, non-negative intensity frames on one grid.

    ``frames`` is a ``(T, ny, nx)`` array; it may be a read-only memmap of a
    container file, in which case nothing is loaded until iterated.
    """

    grid: PixelGrid
    frames: np.ndarray
    labels: Optional[Sequence[str]] = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        frames = self.frames
        if not isinstance(frames, np.ndarray):
            frames = np.asarray(frames, dtype=float)
            self.frames = frames
        if frames.ndim != 3 or frames.shape[1:] != self.grid.shape:
            raise ShapeError(f"frames must have shape (T, {self.grid.ny}, {self.grid.nx}), got {frames.shape}")
        if self.labels is not None and len(self.labels) != frames.shape[0]:
            raise ShapeError("labels must have one entry per frame")
        if self.validate:
            for start, chunk in self.iter_chunks(256):
                if not np.all(np.isfinite(chunk)):
                    raise ValidationError(f"non-finite intensity in frame {self.label(start + _first_bad(chunk, np.isfinite))}")
                if np.any(chunk < 0):
                    raise ValidationError(f"negative intensity in frame {self.label(start + _first_bad(chunk, lambda c: c >= 0))}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def label(self, t: int) -> str:
        return str(self.labels[t]) if self.labels is not None else f"#{t}"

    def iter_chunks(self, size: int):
        """Yield ``(start, chunk)``; each chunk is a fresh ``(B, ny, nx)`` float64 copy."""
        for start in range(0, self.n_frames, size):
            yield start, np.array(self.frames[start:start + size], dtype=np.float64)


def _first_bad(chunk: np.ndarray, ok) -> int:
    good = ok(chunk).reshape(chunk.shape[0], -1).all(axis=1)
    return int(np.argmin(good))


def crop_stack(stack: FrameStack, ix0: int, iy0: int, nx: int, ny: int) -> FrameStack:
    """Rectangular region of interest; the grid origin follows the crop."""
    g = stack.grid
    if ix0 < 0 or iy0 < 0 or ix0 + nx > g.nx or iy0 + ny > g.ny:
        raise IndexError(f"ROI ({ix0}, {iy0}, {nx}, {ny}) does not fit in {g.nx}x{g.ny} grid")
    grid = PixelGrid(nx, ny, g.dx, g.dy, g.x0 + ix0 * g.dx, g.y0 + iy0 * g.dy, g.unit)
    labels = stack.labels
    return FrameStack(grid, stack.frames[:, iy0:iy0 + ny, ix0:ix0 + nx], labels, validate=False)


def bin_stack(stack: FrameStack, factor: int) -> FrameStack:
    """Sum intensities over ``factor x factor`` blocks (photon-count semantics).

    Trailing rows/columns that do not fill a whole bin are dropped.
    """
    if factor < 1:
        raise ValidationError("bin factor must be >= 1")
    g = stack.grid
    nx, ny = g.nx // factor, g.ny // factor
    if nx < 1 or ny < 1:
        raise ShapeError(f"bin factor {factor} too large for {g.nx}x{g.ny} grid")
    frames = np.asarray(stack.frames[:, :ny * factor, :nx * factor], dtype=np.float64)
    binned = frames.reshape(-1, ny, factor, nx, factor).sum(axis=(2, 4))
    grid = PixelGrid(nx, ny, g.dx * factor, g.dy * factor,
                     g.x0 + 0.5 * (factor - 1) * g.dx, g.y0 + 0.5 * (factor - 1) * g.dy, g.unit)
    return FrameStack(grid, binned, stack.labels, validate=False)


class CovKind(enum.Enum):
    COVARIANCE = "covariance"
    ABS_G1 = "abs_g1"


@dataclass(eq=False)
class FlatCovariance:
    """Symmetric ``N x N`` two-point matrix in row-major pixel numbering.

    Symmetry is guaranteed by the producers rather than re-checked here, so
    wrapping a 10^4 x 10^4 matrix costs nothing; :func:`check_symmetric` does
    the blockwise check when needed.
    """

    grid: PixelGrid
    data: np.ndarray
    kind: CovKind = CovKind.COVARIANCE
    clamped_fraction: Optional[float] = None
    dark_subtracted: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.n_pixels
        if self.data.shape != (n, n):
            raise ShapeError(f"matrix shape {self.data.shape} does not match grid with {n} pixels")

    def diagonal_image(self) -> np.ndarray:
        return fold_vector(self.grid, np.diagonal(self.data).copy())


def check_symmetric(a: np.ndarray, rtol: float = 1e-10, block: int = 1024) -> float:
    """Largest ``|a - a.T|`` relative to ``max|a|``, computed in blocks.

    Raises :class:`ValidationError` above ``rtol``.
    """
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"matrix must be square, got {a.shape}")
    scale = 0.0
    worst = 0.0
    for i in range(0, n, block):
        rows = a[i:i + block]
        if not np.all(np.isfinite(rows)):
            raise ValidationError("matrix contains non-finite entries")
        scale = max(scale, float(np.abs(rows).max()))
        for j in range(i, n, block):
            d = np.abs(a[i:i + block, j:j + block] - a[j:j + block, i:i + block].T).max()
            worst = max(worst, float(d))
    rel = worst / scale if scale > 0 else 0.0
    if rel > rtol:
        raise ValidationError(f"matrix is not symmetric: max |A - A^T| / max|A| = {rel:.3e}")
    return rel


@dataclass(frozen=True)
class Cut1D:
    """Correlations between all pixel pairs on one grid row or column."""

    coords: np.ndarray
    values: np.ndarray
    fixed_axis: str
    fixed_value: float
    snapped: bool


def line_indices(grid: PixelGrid, fixed_axis: str, fixed_value: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Flat indices, running coordinates and snapped value of a grid line."""
    if fixed_axis not in ("x", "y"):
        raise ValueError(f"fixed_axis must be 'x' or 'y', got {fixed_axis!r}")
    if fixed_axis == "y":
        origin, pitch, count, run = grid.y0, grid.dy, grid.ny, grid.x
    else:
        origin, pitch, count, run = grid.x0, grid.dx, grid.nx, grid.y
    lo, hi = origin - 0.5 * pitch, origin + (count - 0.5) * pitch
    if not (lo <= fixed_value <= hi):
        raise ValueError(f"{fixed_axis}={fixed_value} lies outside the grid extent [{lo}, {hi}]")
    k = int(np.clip(np.rint((fixed_value - origin) / pitch), 0, count - 1))
    snapped = origin + k * pitch
    if fixed_axis == "y":
        idx = k * grid.nx + np.arange(grid.nx)
    else:
        idx = np.arange(grid.ny) * grid.nx + k
    return idx, run, snapped


def cut_1d(cov: FlatCovariance, fixed_axis: str, fixed_value: float) -> Cut1D:
    """Sub-matrix of ``cov`` over the pixels of one grid line.

    ``fixed_axis="y", fixed_value=0.0`` selects the row nearest ``y = 0`` and
    returns correlations as a function of ``(x, x')`` along it. The requested
    coordinate is snapped to the nearest pixel centre.
    """
    idx, run, snapped = line_indices(cov.grid, fixed_axis, fixed_value)
    values = cov.data[np.ix_(idx, idx)].copy()
    pitch = cov.grid.dy if fixed_axis == "y" else cov.grid.dx
    return Cut1D(run.copy(), values, fixed_axis, snapped, abs(snapped - fixed_value) > 1e-9 * pitch)
