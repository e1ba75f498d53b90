import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modekit.core import CovKind, DegenerateError, FlatCovariance, FrameStack, InsufficientDataError, PixelGrid
from modekit.stats import (
    DarkCov,
    MeanIntensity,
    NoFilter,
    StatsConfig,
    Threshold,
    covariance,
    denoise,
    mean_intensity,
    mirror_upper,
    siegert_invert,
    streaming_moments,
)


def two_pass(frames):
    x = frames.reshape(frames.shape[0], -1).astype(float)
    mu = x.mean(axis=0)
    d = x - mu
    return mu, d.T @ d / (x.shape[0] - 1)


stacks = st.builds(
    lambda t, ny, nx, seed, offset: np.random.default_rng(seed).gamma(1.0, 1.0, (t, ny, nx)) + offset,
    st.integers(2, 40), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1),
    st.sampled_from([0.0, 1.0, 1e4]),
)


@given(stacks, st.integers(1, 17))
def test_streaming_matches_two_pass(frames, chunk):
    T, ny, nx = frames.shape
    stack = FrameStack(PixelGrid.centered(nx, ny, 1.0), frames)
    mu, cov = streaming_moments(stack, StatsConfig(chunk=chunk))
    mu_ref, cov_ref = two_pass(frames)
    scale = np.abs(cov_ref).max()
    np.testing.assert_allclose(mu, mu_ref, rtol=1e-12)
    assert np.abs(cov - cov_ref).max() <= 1e-10 * scale
    np.testing.assert_array_equal(cov, cov.T)


def test_matches_numpy_cov(rng):
    frames = rng.random((200, 6, 5))
    cov = covariance(FrameStack(PixelGrid.centered(5, 6, 1.0), frames))
    assert cov.kind is CovKind.COVARIANCE
    ref = np.cov(frames.reshape(200, -1), rowvar=False)
    np.testing.assert_allclose(cov.data, ref, rtol=1e-10, atol=1e-14)


def test_input_frames_untouched(rng):
    frames = rng.random((10, 3, 3))
    before = frames.copy()
    streaming_moments(FrameStack(PixelGrid.centered(3, 3, 1.0), frames), StatsConfig(normalize_integral=True))
    np.testing.assert_array_equal(frames, before)


def test_needs_two_frames():
    with pytest.raises(InsufficientDataError):
        streaming_moments(FrameStack(PixelGrid.centered(2, 2, 1.0), np.ones((1, 2, 2))))


def test_integral_normalization(rng):
    frames = rng.random((30, 4, 4))
    scales = rng.uniform(0.5, 2.0, 30)
    g = PixelGrid.centered(4, 4, 1.0)
    cfg = StatsConfig(normalize_integral=True)
    a = covariance(FrameStack(g, frames), cfg).data
    b = covariance(FrameStack(g, frames * scales[:, None, None]), cfg).data
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-16)
    m = mean_intensity(FrameStack(g, frames), cfg)
    assert m.values.sum() == pytest.approx(1.0)


def test_zero_frame_named():
    frames = np.ones((3, 2, 2))
    frames[1] = 0
    stack = FrameStack(PixelGrid.centered(2, 2, 1.0), frames, labels=["f0", "f1", "f2"])
    with pytest.raises(DegenerateError, match="f1"):
        covariance(stack, StatsConfig(normalize_integral=True))


@given(st.integers(1, 40), st.integers(1, 16), st.integers(0, 1000))
def test_mirror_upper(n, block, seed):
    a = np.asfortranarray(np.random.default_rng(seed).random((n, n)))
    expected = np.triu(a) + np.triu(a, 1).T
    mirror_upper(a, block)
    np.testing.assert_array_equal(a, expected)


def _g(n=3):
    return PixelGrid.centered(n, 1, 1.0)


@given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
def test_siegert_clamps_and_counts(m):
    m = m + m.T
    cov = FlatCovariance(_g(), m)
    mean = MeanIntensity(_g(), np.ones((1, 3)))
    out = siegert_invert(cov, mean, StatsConfig(noise_filter=NoFilter()))
    assert out.kind is CovKind.ABS_G1
    np.testing.assert_allclose(out.data, np.sqrt(np.maximum(m, 0)))
    assert out.clamped_fraction == np.count_nonzero(m < 0) / 9
    # the input is left alone unless inplace
    assert np.array_equal(cov.data, m)


def test_siegert_shot_noise_diagonal():
    m = np.full((3, 3), 4.0)
    mean = MeanIntensity(_g(), np.array([[1.0, 2.0, 3.0]]))
    cfg = StatsConfig(subtract_shot_noise=True, shot_noise_scale=1.0)
    out = siegert_invert(FlatCovariance(_g(), m), mean, cfg)
    np.testing.assert_allclose(np.diag(out.data), np.sqrt([3.0, 2.0, 1.0]))
    assert out.data[0, 1] == 2.0


def test_siegert_rejects_abs_g1():
    g1 = FlatCovariance(_g(), np.eye(3), CovKind.ABS_G1)
    with pytest.raises(ValueError):
        siegert_invert(g1, MeanIntensity(_g(), np.ones((1, 3))))


def test_threshold_denoise():
    m = np.array([[1.0, 0.01, 0.5], [0.01, 1.0, 0.03], [0.5, 0.03, 2.0]])
    g1 = FlatCovariance(_g(), m, CovKind.ABS_G1, meta={"x": 1})
    out = denoise(g1, StatsConfig(noise_filter=Threshold(0.02)))
    expected = m.copy()
    expected[m < 0.04] = 0
    np.testing.assert_array_equal(out.data, expected)
    assert out.meta == {"x": 1}
    assert denoise(g1, StatsConfig(noise_filter=NoFilter())).data is m


def test_dark_covariance_subtraction(rng):
    g = PixelGrid.centered(3, 2, 1.0)
    dark = FrameStack(g, rng.random((50, 2, 3)))
    light = FrameStack(g, rng.random((50, 2, 3)) * 3)
    cfg = StatsConfig(noise_filter=DarkCov(dark))
    mu, cov = streaming_moments(light)
    out = siegert_invert(FlatCovariance(g, cov.copy()), mean_intensity(light), cfg)
    expected = np.sqrt(np.maximum(cov - covariance(dark).data, 0))
    np.testing.assert_allclose(out.data, expected, atol=1e-14)
    assert denoise(out, cfg) is out
    with pytest.raises(ValueError, match="before"):
        denoise(FlatCovariance(g, np.eye(6), CovKind.ABS_G1), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        StatsConfig(shot_noise_scale=-1)
    with pytest.raises(ValueError):
        Threshold(-0.1)
    assert StatsConfig.for_pdc().normalize_integral
    assert not StatsConfig.for_fiber().normalize_integral
