"""Far-field field correlation of one beam of degenerate high-gain PDC.

With the pump profile ``sigma A_p(rho)``, the phase mismatch
``Delta(q) = Delta_0 - |q|^2 / k_s`` and
``Gamma(q, rho) = sqrt(sigma^2 A_p^2 - Delta^2 / 4)``, the correlation is

    G1(q, q') ~ iint d rho exp(i (q - q') rho) A_p^2 S(q, rho) S(q', rho),
    S = sinh(Gamma L) / Gamma.

The integral is a Gram matrix: writing ``f_q(rho) = A_p S(q, rho) sqrt(w)``
over tensor-product Gauss-Legendre nodes with weights ``w``, and using the
even pump, ``G1 = C C^T + S S^T`` with ``C = f cos(q rho)``,
``S = f sin(q rho)``. It is accumulated over node chunks so the working set
stays at one ``N x N`` matrix.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import blas

from .core import CovKind, FlatCovariance, PixelGrid, ValidationError
from .stats import mirror_upper

log = logging.getLogger(__name__)

NARROWBAND_FWHM = 30e-6


class QuadratureWarning(RuntimeWarning):
    pass


class NegativityWarning(RuntimeWarning):
    pass


def _default_grid() -> PixelGrid:
    return PixelGrid.centered(64, 64, 70e-3 / 63, unit="rad")


@dataclass(frozen=True)
class PdcParams:
    """Physical parameters of the PDC source and the sampling of its far field.

    ``angle_grid`` is the far-field grid in external angles (radians),
    ``theta = q / k0`` with ``k0 = 2 pi / lambda_s`` the vacuum signal
    wavenumber. ``rho_nodes`` are the Gauss-Legendre node counts over the
    pump plane, spanning ``+-rho_extent * w_p`` in x and
    ``+-rho_extent * eps * w_p`` in y.
    """

    gain: float = 3.8
    fwhm_x: float = 140e-6
    ellipticity: float = 1.2
    mismatch: float = -50.0
    crystal_length: float = 2e-3
    lambda_p: float = 354.67e-9
    n_p: float = 1.7
    n_s: float = 1.66
    angle_grid: PixelGrid = field(default_factory=_default_grid)
    rho_nodes: tuple[int, int] = (128, 160)
    rho_extent: float = 4.0

    def __post_init__(self):
        positive = dict(gain=self.gain, fwhm_x=self.fwhm_x, ellipticity=self.ellipticity,
                        crystal_length=self.crystal_length, lambda_p=self.lambda_p, rho_extent=self.rho_extent)
        for name, value in positive.items():
            if not value > 0:
                raise ValidationError(f"{name} must be positive, got {value}")
        if self.n_p < 1 or self.n_s < 1:
            raise ValidationError("refractive indices must be >= 1")
        if self.angle_grid.unit != "rad":
            raise ValidationError("angle_grid must be in radians (external angles)")
        if min(self.rho_nodes) < 2:
            raise ValidationError("need at least 2 quadrature nodes per axis")
        if min(self.fwhm_x, self.fwhm_x * self.ellipticity) < 3 * NARROWBAND_FWHM:
            warnings.warn(f"pump FWHM {self.fwhm_x * 1e6:.0f} um is not much larger than "
                          f"{NARROWBAND_FWHM * 1e6:.0f} um; the narrow-band pump approximation is doubtful",
                          QuadratureWarning, stacklevel=3)

    @property
    def lambda_s(self) -> float:
        return 2.0 * self.lambda_p

    @property
    def k_s(self) -> float:
        """Signal wavenumber inside the crystal."""
        return 2 * np.pi * self.n_s / self.lambda_s

    @property
    def k_p(self) -> float:
        return 2 * np.pi * self.n_p / self.lambda_p

    @property
    def k0(self) -> float:
        """Vacuum signal wavenumber; external angles are ``q / k0``."""
        return 2 * np.pi / self.lambda_s

    @property
    def w_p(self) -> float:
        return self.fwhm_x / (2 * np.sqrt(np.log(2)))

    def with_(self, **kw) -> "PdcParams":
        return replace(self, **kw)


def wavevector_grid(params: PdcParams) -> PixelGrid:
    """The far-field sampling expressed in transverse wavevectors.

    ``PixelGrid`` only knows metres and radians, so the returned grid is
    labelled ``"m"`` while its coordinates are in 1/m.
    """
    g, k0 = params.angle_grid, params.k0
    return PixelGrid(g.nx, g.ny, g.dx * k0, g.dy * k0, g.x0 * k0, g.y0 * k0, "m")


def external_angles(params: PdcParams) -> PixelGrid:
    """Far-field grid in external angles ``theta = q / k0`` (radians)."""
    return params.angle_grid


def pump_amplitude(params: PdcParams, x, y):
    """``sigma * A_p(x, y)`` in 1/m; its peak times ``L`` is the gain ``G``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    wp = params.w_p
    return (params.gain / params.crystal_length) * np.exp(
        -(x ** 2 + y ** 2 / params.ellipticity ** 2) / (2 * wp ** 2))


def mismatch(params: PdcParams, q2):
    """``Delta(q) = Delta_0 - |q|^2 / k_s``."""
    return params.mismatch - np.asarray(q2, dtype=float) / params.k_s


def sinhc_kernel(gamma2, length: float):
    """``sinh(Gamma L) / Gamma`` as a function of ``Gamma^2``.

    Negative ``Gamma^2`` (imaginary Gamma) gives ``sin(|Gamma| L) / |Gamma|``;
    near zero a series in ``Gamma^2 L^2`` joins the branches smoothly.
    """
    g2 = np.asarray(gamma2, dtype=float)
    z = g2 * length ** 2
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    pos = (z > 0) & ~small
    neg = (z < 0) & ~small
    zs = z[small]
    out[small] = length * (1 + zs / 6 + zs ** 2 / 120 + zs ** 3 / 5040)
    g = np.sqrt(g2[pos])
    out[pos] = np.sinh(g * length) / g
    g = np.sqrt(-g2[neg])
    out[neg] = np.sin(g * length) / g
    return out


def gain_kernel(params: PdcParams, q, rho):
    """``S(q, rho)`` for transverse wavevector ``q = (qx, qy)`` and pump point ``rho = (x, y)``.

    Arguments broadcast against each other component-wise.
    """
    qx, qy = q
    x, y = rho
    a = pump_amplitude(params, x, y)
    delta = mismatch(params, np.asarray(qx) ** 2 + np.asarray(qy) ** 2)
    return sinhc_kernel(a ** 2 - delta ** 2 / 4, params.crystal_length)


def _nodes(params: PdcParams):
    nx, ny = params.rho_nodes
    ext = params.rho_extent * params.w_p
    tx, wx = np.polynomial.legendre.leggauss(nx)
    ty, wy = np.polynomial.legendre.leggauss(ny)
    ey = ext * params.ellipticity
    return tx * ext, wx * ext, ty * ey, wy * ey


def check_quadrature(params: PdcParams) -> list[str]:
    """Warnings about the pump-plane quadrature; empty when it looks adequate.

    The Gauss-Legendre rule must resolve both the pump (>= 8 nodes per w_p)
    and the fastest phase ``(q - q') rho`` across the grid.
    """
    msgs = []
    xs, _, ys, _ = _nodes(params)
    qg = wavevector_grid(params)
    for axis, nodes, span_q in (("x", xs, qg.dx * (qg.nx - 1)), ("y", ys, qg.dy * (qg.ny - 1))):
        half = nodes.max()
        per_wp = nodes.size / (2 * half / params.w_p)
        if per_wp < 8:
            msgs.append(f"{axis}: {per_wp:.1f} nodes per pump waist (< 8)")
        needed = 0.6 * span_q * half
        if nodes.size < needed:
            msgs.append(f"{axis}: {nodes.size} nodes cannot resolve the phase across the grid (need ~{needed:.0f})")
    return msgs


@dataclass(frozen=True)
class KernelTable:
    """``S`` tabulated over the distinct mismatch values and pump levels.

    ``Delta`` depends on ``q`` only through ``|q|^2`` and the pump only takes
    as many distinct values as there are nodes in one quadrant, so the exact
    table is much smaller than ``N x M``; lookups are plain indexing.
    """

    values: np.ndarray
    q_index: np.ndarray
    rho_index: np.ndarray


def tabulate_kernel(params: PdcParams, q2: np.ndarray, amp: np.ndarray) -> KernelTable:
    # relative rounding merges entries equal up to float noise
    q2_keys = np.round(q2 / max(q2.max(), 1e-300), 12)
    uq, q_index = np.unique(q2_keys, return_inverse=True)
    q2_unique = np.zeros(uq.size)
    np.maximum.at(q2_unique, q_index, q2)
    a_keys = np.round(amp / amp.max(), 12)
    ua, rho_index = np.unique(a_keys, return_inverse=True)
    a_unique = np.zeros(ua.size)
    np.maximum.at(a_unique, rho_index, amp)
    delta = mismatch(params, q2_unique)
    values = sinhc_kernel(a_unique[None, :] ** 2 - delta[:, None] ** 2 / 4, params.crystal_length)
    return KernelTable(values, q_index.ravel(), rho_index.ravel())


def memory_estimate(params: PdcParams, chunk: int = 512) -> int:
    n = params.angle_grid.n_pixels
    return 8 * (n * n + 6 * n * chunk)


def g1_pdc(params: PdcParams = PdcParams(), chunk: int = 512, memory_limit: float = 2e9,
           normalize: bool = True) -> FlatCovariance:
    """Assemble ``|G1(q, q')|`` on the external-angle grid of ``params``.

    The matrix is scaled so that ``trace * dA = 1``; the weights from
    :func:`modekit.modes.decompose` then sum to one. The assembled matrix is
    real by the parity of the pump; entries below ``-1e-6 * max`` are
    reported with a :class:`NegativityWarning` before the absolute value is
    taken. The pre-abs ``min / max`` ratio is kept in ``meta["min_ratio"]``.
    """
    need = memory_estimate(params, chunk)
    if need > memory_limit:
        raise MemoryError(f"PDC matrix needs ~{need / 1e9:.1f} GB (> {memory_limit / 1e9:.1f} GB); "
                          "use a coarser angle grid (bin) or raise memory_limit")
    for msg in check_quadrature(params):
        warnings.warn(f"under-resolved quadrature: {msg}", QuadratureWarning, stacklevel=2)

    qg = wavevector_grid(params)
    QX, QY = qg.meshgrid()
    qx, qy = QX.ravel(), QY.ravel()
    xs, wx, ys, wy = _nodes(params)
    RX, RY = np.meshgrid(xs, ys)
    rx, ry = RX.ravel(), RY.ravel()
    weight = np.outer(wy, wx).ravel()
    amp = pump_amplitude(params, rx, ry)
    table = tabulate_kernel(params, qx ** 2 + qy ** 2, amp)
    scale = amp * np.sqrt(weight)

    n = qx.size
    acc = np.zeros((n, n), order="F")
    for s in range(0, rx.size, chunk):
        sl = slice(s, s + chunk)
        f = table.values[np.ix_(table.q_index, table.rho_index[sl])] * scale[sl]
        phase = np.multiply.outer(qx, rx[sl]) + np.multiply.outer(qy, ry[sl])
        feat = np.asfortranarray(f * np.cos(phase))
        acc = blas.dsyrk(1.0, feat, beta=1.0, c=acc, trans=0, lower=0, overwrite_c=1)
        np.sin(phase, out=phase)
        phase *= f
        acc = blas.dsyrk(1.0, np.asfortranarray(phase), beta=1.0, c=acc, trans=0, lower=0, overwrite_c=1)
    mirror_upper(acc)

    peak = float(np.abs(acc).max())
    min_ratio = float(acc.min()) / peak
    if min_ratio < -1e-6:
        frac = float(np.mean(acc < -1e-6 * peak))
        warnings.warn(f"assembled G1 has negative entries (min/max = {min_ratio:.2e}, "
                      f"{frac:.2%} below -1e-6 max); storing the absolute value", NegativityWarning, stacklevel=2)
    np.abs(acc, out=acc)
    grid = external_angles(params)
    if normalize:
        acc /= np.trace(acc) * grid.pixel_area
    return FlatCovariance(grid, acc.T, CovKind.ABS_G1, meta={"min_ratio": min_ratio})
