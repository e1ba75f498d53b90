"""LP modes of a weakly guiding step-index fiber.

Inside the core the field is ``J_l(u r / a)``, outside ``K_l(w r / a)``, with
``u^2 + w^2 = V^2`` and ``u`` fixed by the characteristic equation

    u J_{l-1}(u) / J_l(u) = -w K_{l-1}(w) / K_l(w).

LP_lm is guided above the m-th zero of ``J_{l-1}`` (LP01 has no cutoff).
Every ``l > 0`` mode exists in a cos and a sin orientation and is counted
twice; polarization is not counted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .core import PixelGrid, ValidationError
from .modes import ModeSet


@dataclass(frozen=True)
class FiberParams:
    core_radius: float = 4.1e-6
    na: float = 0.14
    wavelength: float = 532e-9
    grid: Optional[PixelGrid] = None

    def __post_init__(self):
        if not self.core_radius > 0:
            raise ValidationError("core radius must be positive")
        if not 0 < self.na < 1:
            raise ValidationError(f"numerical aperture must lie in (0, 1), got {self.na}")
        if not self.wavelength > 0:
            raise ValidationError("wavelength must be positive")

    @classmethod
    def from_indices(cls, core_radius: float, n_core: float, n_clad: float, wavelength: float,
                     grid: Optional[PixelGrid] = None) -> "FiberParams":
        if n_core <= n_clad:
            raise ValidationError("core index must exceed cladding index")
        return cls(core_radius, float(np.sqrt(n_core ** 2 - n_clad ** 2)), wavelength, grid)

    @property
    def v_number(self) -> float:
        return 2 * np.pi * self.core_radius * self.na / self.wavelength

    def default_grid(self, n: int = 64, extent: float = 3.5) -> PixelGrid:
        """Square grid spanning ``+-extent`` core radii."""
        half = extent * self.core_radius
        return PixelGrid.centered(n, n, 2 * half / (n - 1), unit="m")


def cutoff_zeros(l: int, count: int) -> np.ndarray:
    """Cutoff V values of LP_l1 .. LP_l,count: zeros of ``J_{l-1}``.

    For ``l = 0`` this is ``0`` followed by the zeros of ``J_1``; for
    ``l >= 2`` the trivial zero at the origin is skipped.
    """
    if l == 0:
        return np.concatenate([[0.0], special.jn_zeros(1, count - 1)]) if count > 1 else np.zeros(1)
    return special.jn_zeros(l - 1, count)


def lp_cutoffs(params: FiberParams) -> list[tuple[int, int, float]]:
    """Guided ``(l, m, cutoff_V)`` sorted by cutoff."""
    v = params.v_number
    out = []
    l = 0
    while True:
        zs = cutoff_zeros(l, 1)
        if zs[0] >= v:
            break
        count = 1
        while True:
            zs = cutoff_zeros(l, count + 1)
            if zs[-1] >= v:
                break
            count += 1
        zs = cutoff_zeros(l, count)
        out.extend((l, m + 1, float(z)) for m, z in enumerate(zs))
        l += 1
    out.sort(key=lambda t: (t[2], t[0]))
    return out


def mode_count(params: FiberParams) -> int:
    """Guided modes with both orientations of every ``l > 0`` mode."""
    return sum(1 if l == 0 else 2 for l, _, _ in lp_cutoffs(params))


def approx_mode_count(v: float) -> float:
    """Large-V estimate ``4 V^2 / pi^2 + 2`` (two polarizations included)."""
    return 4 * v ** 2 / np.pi ** 2 + 2


def characteristic(l: int, u: float, v: float) -> float:
    """``u J_{l-1}(u) + w J_l(u) K_{l-1}(w) / K_l(w)``; zero on an LP mode.

    This is the characteristic equation multiplied through by ``J_l(u)``,
    which stays finite across the poles of the original form. The Bessel-K
    ratio uses exponentially scaled functions.
    """
    w = np.sqrt(max(v * v - u * u, 0.0))
    if w == 0.0:
        return float(u * special.jv(l - 1, u))
    ratio = special.kve(l - 1, w) / special.kve(l, w)
    return float(u * special.jv(l - 1, u) + w * special.jv(l, u) * ratio)


def solve_u(l: int, m: int, v: float) -> float:
    """Core parameter ``u`` of LP_lm by bracketed root finding.

    The root lies between the cutoff (m-th zero of ``J_{l-1}``) and the
    smaller of ``V`` and the m-th zero of ``J_l``; ``J_l`` has no zero inside
    that interval, so the scaled equation has exactly one sign change there.
    """
    lo = cutoff_zeros(l, m)[-1]
    if lo >= v:
        raise ValueError(f"LP{l}{m} is not guided at V={v:.4f} (cutoff {lo:.4f})")
    hi = min(special.jn_zeros(l, m)[-1], v)
    eps = 1e-12 * v
    a, b = max(lo, 0.0) + eps, hi - eps
    fa, fb = characteristic(l, a, v), characteristic(l, b, v)
    if fa * fb > 0:
        raise ArithmeticError(f"LP{l}{m}: dispersion root not bracketed on [{a:.6f}, {b:.6f}]")
    return brentq(lambda u: characteristic(l, u, v), a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def dispersion_residual(l: int, u: float, v: float) -> float:
    """Relative mismatch of the logarithmic derivatives at ``r = a``."""
    w = np.sqrt(v * v - u * u)
    inside = u * special.jvp(l, u) / special.jv(l, u)
    outside = w * special.kvp(l, w) / special.kv(l, w)
    return abs(inside - outside) / max(abs(inside), abs(outside), 1.0)


def radial_profile(l: int, u: float, v: float, r_over_a):
    """Radial field, 1 at the core boundary and continuous there."""
    r = np.asarray(r_over_a, dtype=float)
    w = np.sqrt(v * v - u * u)
    out = np.empty_like(r)
    core = r <= 1.0
    out[core] = special.jv(l, u * r[core]) / special.jv(l, u)
    clad = ~core
    # kve(l, w r) / kve(l, w) * exp(-w (r - 1)) == kv(l, w r) / kv(l, w)
    out[clad] = special.kve(l, w * r[clad]) / special.kve(l, w) * np.exp(-w * (r[clad] - 1.0))
    return out


def lp_field(params: FiberParams, l: int, m: int, orientation: str, x, y):
    """Unnormalized LP field at physical points ``(x, y)``."""
    if orientation not in ("cos", "sin"):
        raise ValueError("orientation must be 'cos' or 'sin'")
    v = params.v_number
    u = solve_u(l, m, v)
    r = np.hypot(x, y) / params.core_radius
    phi = np.arctan2(y, x)
    ang = np.cos(l * phi) if orientation == "cos" else np.sin(l * phi)
    return radial_profile(l, u, v, r) * ang


def lp_profile(params: FiberParams, l: int, m: int, orientation: str = "cos",
               grid: Optional[PixelGrid] = None) -> np.ndarray:
    """LP_lm sampled on the grid and normalized to ``sum u^2 dx dy = 1``."""
    if l < 0 or m < 1:
        raise ValueError(f"invalid LP indices l={l}, m={m}")
    if l == 0 and orientation == "sin":
        raise ValueError("LP0m has no sin orientation")
    guided = {(ll, mm) for ll, mm, _ in lp_cutoffs(params)}
    if (l, m) not in guided:
        raise ValueError(f"LP{l}{m} is not guided at V={params.v_number:.4f}")
    grid = grid or params.grid or params.default_grid()
    X, Y = grid.meshgrid()
    f = lp_field(params, l, m, orientation, X, Y)
    return f / np.sqrt(np.sum(f * f) * grid.pixel_area)


def lp_labels(params: FiberParams) -> list[tuple[int, int, str]]:
    out = []
    for l, m, _ in lp_cutoffs(params):
        out.append((l, m, "cos"))
        if l > 0:
            out.append((l, m, "sin"))
    return out


def lp_modeset(params: FiberParams, grid: Optional[PixelGrid] = None, weights=None) -> ModeSet:
    """All guided LP profiles, ordered by cutoff, as a :class:`ModeSet`.

    Weights are uniform unless given (they must then be descending); the
    real mode content depends on how light is coupled into the fiber.
    """
    grid = grid or params.grid or params.default_grid()
    labels = lp_labels(params)
    profiles = np.array([lp_profile(params, l, m, o, grid) for l, m, o in labels])
    if weights is None:
        weights = np.full(len(labels), 1.0 / len(labels))
    return ModeSet(grid, np.asarray(weights, dtype=float), profiles)
