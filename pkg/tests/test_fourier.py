import math

import numpy as np
import pytest

from cp_certify.exception import ShapeMismatch
from cp_certify.fourier import (
    FrequencyGrid,
    conv2d_circular,
    conv2d_circular_adjoint,
    conv2d_fourier,
    conv_operator_norm_exact,
    depthwise_circular,
    depthwise_circular_adjoint,
    embed_kernel,
    frequency_slices,
    imdft,
    mdft,
    spatial_spectrum,
)
from cp_certify.tensor import dense_matrix


def test_mdft_is_unitary_and_invertible(rng):
    for _ in range(200):
        ndim = int(rng.integers(1, 4))
        shape = tuple(int(d) for d in rng.integers(1, 7, size=ndim))
        dims = [d for d in range(ndim) if rng.random() < 0.7]
        t = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        t_hat = mdft(t, dims)
        assert np.linalg.norm(t_hat) == pytest.approx(np.linalg.norm(t), rel=1e-12)
        assert np.max(np.abs(imdft(t_hat, dims) - t)) <= 1e-12 * max(
            1.0, np.max(np.abs(t))
        )


def test_mdft_without_dims_copies(rng):
    t = rng.standard_normal((3, 4))
    out = mdft(t, [])
    np.testing.assert_array_equal(out, t)
    out[0, 0] = 99.0
    assert t[0, 0] != 99.0


def test_mdft_rejects_repeated_or_invalid_axes(rng):
    t = rng.standard_normal((3, 4))
    with pytest.raises(ShapeMismatch):
        mdft(t, [0, 0])
    with pytest.raises(ShapeMismatch):
        imdft(t, [2])


def test_frequency_grid_validates():
    assert FrequencyGrid(4, 5).size == 20
    with pytest.raises(ShapeMismatch):
        FrequencyGrid(0, 3)


def test_spectra_reject_empty_grid():
    with pytest.raises(ShapeMismatch):
        spatial_spectrum(np.ones((1, 1, 1)), 0, 3)
    with pytest.raises(ShapeMismatch):
        frequency_slices(np.ones((1, 1, 1, 1)), 3, 0)


def test_mdft_of_all_ones_2x2():
    out = mdft(np.ones((2, 2)), [0, 1])
    expected = np.zeros((2, 2))
    expected[0, 0] = 2.0
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_mdft_is_separable(rng):
    for _ in range(50):
        shape = tuple(int(d) for d in rng.integers(1, 9, size=3))
        t = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        joint = mdft(t, [0, 1, 2])
        sequential = mdft(mdft(mdft(t, [2]), [0]), [1])
        assert np.max(np.abs(sequential - joint)) <= 1e-12


def test_embed_kernel_rejects_oversized():
    with pytest.raises(ShapeMismatch):
        embed_kernel(np.ones((5, 3)), 4, 4)
    out = embed_kernel(np.ones((2, 3, 2)), 4, 5)
    assert out.shape == (4, 5, 2)
    assert out.sum() == 12.0


def test_convolution_theorem(rng):
    for _ in range(20):
        H, W = int(rng.integers(3, 8)), int(rng.integers(3, 8))
        kx, ky = int(rng.integers(1, H + 1)), int(rng.integers(1, W + 1))
        s, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.standard_normal((H, W, s))
        m = rng.standard_normal((kx, ky, o, s))
        direct = conv2d_circular(x, m)
        spectral = conv2d_fourier(x, m)
        assert np.linalg.norm(direct - spectral) <= 1e-10 * np.linalg.norm(direct)


def test_delta_kernel_is_identity(rng):
    x = rng.standard_normal((2, 5, 6, 3))
    m = np.zeros((3, 3, 3, 3))
    m[0, 0] = np.eye(3)
    np.testing.assert_allclose(conv2d_circular(x, m), x)


def test_shifted_delta_rolls_input(rng):
    x = rng.standard_normal((5, 6, 1))
    m = np.zeros((2, 3, 1, 1))
    m[1, 2, 0, 0] = 1.0
    np.testing.assert_allclose(
        conv2d_circular(x, m), np.roll(x, shift=(1, 2), axis=(0, 1))
    )


def test_convolution_adjoint_identity(rng):
    x = rng.standard_normal((3, 6, 5, 2))
    m = rng.standard_normal((3, 2, 4, 2))
    y = rng.standard_normal((3, 6, 5, 4))
    lhs = np.vdot(conv2d_circular(x, m), y)
    rhs = np.vdot(x, conv2d_circular_adjoint(y, m))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_depthwise_adjoint_identity(rng):
    z = rng.standard_normal((2, 5, 4, 3))
    c = rng.standard_normal((3, 3, 2))
    w = rng.standard_normal((2, 5, 4, 3))
    lhs = np.vdot(depthwise_circular(z, c), w)
    rhs = np.vdot(z, depthwise_circular_adjoint(w, c))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_depthwise_matches_diagonal_channel_kernel(rng):
    z = rng.standard_normal((4, 4, 2))
    c = rng.standard_normal((2, 2, 3))
    m = np.zeros((2, 3, 2, 2))
    for r in range(2):
        m[:, :, r, r] = c[r]
    np.testing.assert_allclose(depthwise_circular(z, c), conv2d_circular(z, m))


def test_higher_order_convolution_matches_flattened_channels(rng):
    x = rng.standard_normal((4, 5, 2, 3))
    m = rng.standard_normal((2, 2, 3, 2, 2, 3))
    out = conv2d_circular(x, m)
    assert out.shape == (4, 5, 3, 2)
    flat = conv2d_circular(x.reshape(4, 5, 6), m.reshape(2, 2, 6, 6))
    np.testing.assert_allclose(out.reshape(4, 5, 6), flat)


def test_conv_rejects_mismatched_channels(rng):
    with pytest.raises(ShapeMismatch):
        conv2d_circular(rng.standard_normal((4, 4, 2)), np.ones((3, 3, 1, 3)))
    with pytest.raises(ShapeMismatch):
        conv2d_circular(rng.standard_normal((2, 2, 1)), np.ones((3, 3, 1, 1)))


def test_exact_norm_matches_dense_matrix(rng):
    for _ in range(10):
        H, W = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        s, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        m = rng.standard_normal((2, 2, o, s))
        matrix = dense_matrix(lambda x, m=m: conv2d_circular(x, m), (H, W, s))
        exact = conv_operator_norm_exact(m, H, W)
        assert exact == pytest.approx(np.linalg.norm(matrix, ord=2), rel=1e-10)


def test_exact_norm_is_attained_by_a_single_frequency(rng):
    H, W = 5, 4
    m = rng.standard_normal((3, 3, 2, 3))
    slices = frequency_slices(m, H, W)
    norms = np.linalg.norm(slices, ord=2, axis=(2, 3))
    f, g = np.unravel_index(np.argmax(norms), norms.shape)
    _, _, vh = np.linalg.svd(slices[f, g])
    z_hat = np.zeros((H, W, 3), dtype=complex)
    z_hat[f, g] = vh[0].conj()
    z = imdft(z_hat, (0, 1))
    y = conv2d_circular(z, m)
    exact = conv_operator_norm_exact(m, H, W)
    assert np.linalg.norm(y) == pytest.approx(exact * np.linalg.norm(z), rel=1e-10)


def test_spatial_spectrum_of_delta_is_flat():
    c = np.zeros((1, 3, 3))
    c[0, 0, 0] = 1.0
    amps = spatial_spectrum(c, 4, 4)
    assert amps.shape == (1, 4, 4)
    np.testing.assert_allclose(amps, 1.0 / math.sqrt(16))
