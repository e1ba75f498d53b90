import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modekit.core import PixelGrid, ValidationError
from modekit.pdc_sim import (
    NegativityWarning,
    PdcParams,
    QuadratureWarning,
    external_angles,
    g1_pdc,
    gain_kernel,
    mismatch,
    pump_amplitude,
    sinhc_kernel,
    tabulate_kernel,
    wavevector_grid,
)

SMALL = PixelGrid.centered(12, 12, 70e-3 / 11, unit="rad")


def small_params(**kw):
    kw.setdefault("angle_grid", SMALL)
    return PdcParams(**kw)


def test_peak_gain():
    p = PdcParams()
    assert pump_amplitude(p, 0.0, 0.0) * p.crystal_length == pytest.approx(3.8)


def test_pump_fwhm_and_ellipticity():
    p = PdcParams()
    peak = pump_amplitude(p, 0.0, 0.0) ** 2
    assert pump_amplitude(p, p.fwhm_x / 2, 0.0) ** 2 == pytest.approx(peak / 2)
    assert pump_amplitude(p, 0.0, p.ellipticity * p.fwhm_x / 2) ** 2 == pytest.approx(peak / 2)


def test_wavenumbers():
    p = PdcParams()
    assert p.lambda_s == pytest.approx(709.34e-9)
    assert p.k_s == pytest.approx(2 * np.pi * 1.66 / 709.34e-9)
    assert p.k_p == pytest.approx(2 * np.pi * 1.7 / 354.67e-9)
    wg = wavevector_grid(p)
    assert wg.dx == pytest.approx(p.angle_grid.dx * p.k0)
    assert external_angles(p).unit == "rad"


def test_mismatch_at_center():
    p = PdcParams()
    assert mismatch(p, 0.0) == -50.0
    assert mismatch(p, p.k_s * 10.0) == pytest.approx(-60.0)


def _sinhc_oracle(g2, L):
    g = mpmath.sqrt(mpmath.mpf(g2))
    if g2 == 0:
        return L
    return float(mpmath.re(mpmath.sinh(g * L) / g))


@given(st.floats(-1e8, 1e8, allow_nan=False))
def test_sinhc_against_mpmath(g2):
    L = 2e-3
    mpmath.mp.dps = 40
    got = float(sinhc_kernel(np.array([g2]), L)[0])
    want = _sinhc_oracle(g2, L)
    assert got == pytest.approx(want, rel=1e-11, abs=1e-14 * L)


def test_sinhc_continuous_at_zero():
    L = 2e-3
    edge = 1e-3 / L ** 2
    for side in (-1, 1):
        x = np.array([side * edge * (1 - 1e-9), side * edge * (1 + 1e-9)])
        a, b = sinhc_kernel(x, L)
        assert abs(a - b) <= 1e-12 * L


@given(st.integers(0, 10_000))
def test_kernel_table_is_exact(seed):
    rng = np.random.default_rng(seed)
    p = PdcParams()
    q = rng.choice(np.linspace(-3e5, 3e5, 9), size=(2, 40))
    rho = rng.choice(np.linspace(-3e-4, 3e-4, 7), size=(2, 40))
    table = tabulate_kernel(p, q[0] ** 2 + q[1] ** 2, pump_amplitude(p, *rho))
    got = table.values[table.q_index, table.rho_index]
    np.testing.assert_allclose(got, gain_kernel(p, q, rho), rtol=1e-10)


def test_low_gain_matches_gaussian_fourier_pair():
    # A_p -> 0: S = sin(|D| L / 2) / (|D| / 2) independent of rho, so G1 is the
    # product S(q) S(q') times the Fourier transform of A_p^2.
    p = small_params(gain=1e-4, rho_nodes=(192, 192))
    g1 = g1_pdc(p).data
    qg = wavevector_grid(p)
    QX, QY = qg.meshgrid()
    qx, qy = QX.ravel(), QY.ravel()
    d = mismatch(p, qx ** 2 + qy ** 2)
    s = np.sin(np.abs(d) * p.crystal_length / 2) / (np.abs(d) / 2)
    w, e = p.w_p, p.ellipticity
    dqx = qx[:, None] - qx[None, :]
    dqy = qy[:, None] - qy[None, :]
    ref = np.abs(np.outer(s, s) * np.exp(-w ** 2 * (dqx ** 2 + e ** 2 * dqy ** 2) / 4))
    ref /= np.trace(ref) * p.angle_grid.pixel_area
    assert np.abs(g1 - ref).max() <= 1e-6 * ref.max()


@pytest.fixture(scope="module")
def round_g1():
    return g1_pdc(small_params(ellipticity=1.0, rho_nodes=(160, 160))).data


def _perm(n, f):
    idx = np.arange(n * n).reshape(n, n)
    return f(idx).ravel()


def test_isotropic_pump_is_rotation_invariant(round_g1):
    rot = _perm(12, np.rot90)
    np.testing.assert_allclose(round_g1[np.ix_(rot, rot)], round_g1, rtol=1e-8, atol=1e-10 * round_g1.max())


@pytest.mark.parametrize("flip", [np.fliplr, np.flipud])
def test_mirror_symmetry(flip):
    g1 = g1_pdc(small_params()).data
    idx = _perm(12, flip)
    np.testing.assert_allclose(g1[np.ix_(idx, idx)], g1, rtol=1e-8, atol=1e-10 * g1.max())


def test_unit_trace_and_symmetry(round_g1):
    assert np.trace(round_g1) * SMALL.pixel_area == pytest.approx(1.0)
    np.testing.assert_array_equal(round_g1, round_g1.T)
    assert round_g1.min() >= 0


def test_negativity_recorded():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativityWarning)
        out = g1_pdc(small_params())
    assert "min_ratio" in out.meta
    assert out.meta["min_ratio"] <= 0 or out.data.min() >= 0


def test_quadrature_and_memory_guards():
    with pytest.warns(QuadratureWarning):
        g1_pdc(small_params(rho_nodes=(8, 8)))
    with pytest.raises(MemoryError):
        g1_pdc(PdcParams(), memory_limit=1e6)


def test_param_validation():
    with pytest.raises(ValidationError):
        PdcParams(gain=0)
    with pytest.raises(ValidationError):
        PdcParams(angle_grid=PixelGrid.centered(4, 4, 1e-6))
    with pytest.warns(QuadratureWarning, match="narrow-band"):
        PdcParams(fwhm_x=50e-6)
