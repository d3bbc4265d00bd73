import numpy as np
import pytest

from cp_certify.cp import (
    CPKernel,
    conv_kernel,
    conv_to_higher,
    cp_als,
    fc_matrix_kernel,
    fc_vector_kernel,
    higher_conv_kernel,
    linear_map,
    normalize,
    opnorm_bound_conv,
    opnorm_bound_fc,
    opnorm_bound_higher_conv,
    polyadic_rank,
    random_kernel,
    rank_cap,
    reconstruct,
    renormalize,
    spatial_first,
    truncate,
)
from cp_certify.exception import NonFiniteError, RankCapExceeded, ShapeMismatch
from cp_certify.fourier import conv_operator_norm_exact
from cp_certify.tensor import operator_norm_oracle, outer_product


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_reconstruct_single_entry():
    kernel = conv_kernel([2.0], [[1.0]], [[1.0]], [[[1.0]]])
    np.testing.assert_array_equal(reconstruct(kernel), [[[[2.0]]]])


def test_reconstruct_rank_zero_is_zero():
    kernel = conv_kernel(
        np.zeros(0), np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 2, 2))
    )
    out = reconstruct(kernel)
    assert out.shape == (2, 3, 2, 2)
    assert not out.any()


def test_reconstruct_matches_outer_products(rng):
    lam = rng.standard_normal(3)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 4))
    c = rng.standard_normal((3, 2, 3))
    kernel = conv_kernel(lam, a, b, c)
    expected = sum(
        lam[r] * outer_product([a[r], b[r], c[r]]).reshape(2, 4, 2, 3)
        for r in range(3)
    )
    np.testing.assert_allclose(reconstruct(kernel), expected, atol=1e-12)


def test_fc_matrix_reconstruct_layout(rng):
    k1, k2 = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 2, 5))
    kernel = fc_matrix_kernel([1.0, -0.5], k1, k2)
    dense = reconstruct(kernel)
    assert dense.shape == (3, 2, 4, 5)
    expected = np.einsum("rac,rbd,r->abcd", k1, k2, np.array([1.0, -0.5]))
    np.testing.assert_allclose(dense, expected, atol=1e-12)


def test_kernel_validates_factor_shapes():
    with pytest.raises(ShapeMismatch):
        conv_kernel([1.0, 2.0], [[1.0]], [[1.0]], [[[1.0]]])
    with pytest.raises(ShapeMismatch):
        CPKernel((2, 2), ((0,),), [1.0], (np.ones((1, 2)),))


def test_normalize_absorbs_sign_and_reorders(rng):
    a = np.array([[-2.0, 0.0], [0.0, 3.0]])
    b = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    c = rng.standard_normal((2, 2, 2))
    kernel = conv_kernel([1.0, 1.0], a, b, c)
    normed = normalize(kernel)
    assert normed.is_normalized()
    assert np.all(np.diff(normed.lambdas) <= 0)
    np.testing.assert_allclose(reconstruct(normed), reconstruct(kernel), atol=1e-12)
    np.testing.assert_allclose(normalize(normed).lambdas, normed.lambdas, rtol=1e-12)


def test_normalize_drops_zero_factor_components(rng):
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b, c = rng.standard_normal((2, 3)), rng.standard_normal((2, 1, 1))
    kernel = conv_kernel([1.0, 5.0], a, b, c)
    result = renormalize(kernel)
    assert result.dropped == 1
    assert result.kernel.rank == 1
    np.testing.assert_allclose(
        reconstruct(result.kernel), reconstruct(kernel), atol=1e-12
    )


def test_normalize_keeps_zero_amplitudes(rng):
    kernel = random_kernel((2, 3, 2, 2), 3, "conv", seed=1)
    zeroed = kernel.replace(np.array([kernel.lambdas[0], 0.0, 0.0]), kernel.factors)
    normed = normalize(zeroed)
    assert normed.rank == 3
    assert normed.lambdas.tolist()[1:] == [0.0, 0.0]


def test_truncate_bounds_and_error():
    kernel = random_kernel((3, 4, 2, 2), 5, "conv", seed=2)
    assert truncate(kernel, 0).rank == 0
    assert truncate(kernel, 5).rank == 5
    with pytest.raises(ValueError):
        truncate(kernel, 6)
    with pytest.raises(ValueError):
        truncate(kernel, -1)
    for j in range(6):
        diff = np.linalg.norm(reconstruct(kernel) - reconstruct(truncate(kernel, j)))
        assert diff <= kernel.lambdas[j:].sum() + 1e-12


def test_rank_caps():
    assert rank_cap([3, 8, 9]) == 24
    assert polyadic_rank((3, 8, 3, 3), "conv") == 24
    assert polyadic_rank((1, 8, 3, 3), "conv") == 8
    assert polyadic_rank((4, 4, 4, 4), "fc_vectors") == 64
    assert polyadic_rank((4, 4, 4, 4), "fc_matrices") == 16


def test_als_rank_one_tensor():
    t = 3.0 * outer_product([_unit([1, 2]), _unit([0, 1, 1]), _unit([2, 0, 1, 1])])
    result = cp_als(t, 1)
    assert result.error <= 1e-10
    assert result.kernel.lambdas[0] == pytest.approx(np.linalg.norm(t), rel=1e-10)


def test_als_recovers_low_rank_tensors(rng):
    for rank, shape in [(2, (4, 5, 6)), (3, (5, 6, 7)), (4, (6, 7, 8))]:
        factors = [rng.standard_normal((n, rank)) for n in shape]
        t = np.einsum("az,bz,cz->abc", *factors)
        result = cp_als(t, rank, seed=0, n_init=3)
        assert result.error <= 1e-6, (rank, result.error)


def test_als_history_is_monotone(rng):
    t = rng.standard_normal((4, 5, 6))
    result = cp_als(t, 3, max_iter=200)
    history = np.asarray(result.history)
    assert np.all(np.diff(history) <= 1e-12)
    assert result.iterations == len(history)


def test_als_is_deterministic(rng):
    t = rng.standard_normal((3, 4, 5))
    first = cp_als(t, 2, seed=7, max_iter=50)
    second = cp_als(t, 2, seed=7, max_iter=50)
    np.testing.assert_array_equal(first.kernel.lambdas, second.kernel.lambdas)
    for f, g in zip(first.kernel.factors, second.kernel.factors):
        np.testing.assert_array_equal(f, g)


def test_als_zero_tensor():
    result = cp_als(np.zeros((2, 3, 4)), 2)
    assert result.error == 0.0
    assert not result.kernel.lambdas.any()


def test_als_rejects_bad_input(rng):
    with pytest.raises(RankCapExceeded):
        cp_als(rng.standard_normal((2, 3, 4)), 7)
    bad = rng.standard_normal((2, 3, 4))
    bad[0, 0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        cp_als(bad, 2)
    with pytest.raises(ShapeMismatch):
        cp_als(rng.standard_normal((2, 3, 4)), 1, modes=[(0,), (1,)])


def test_als_at_conv_rank_cap_is_exact(rng):
    dense = rng.standard_normal((2, 3, 3, 3))
    cap = polyadic_rank(dense.shape, "conv")
    assert cap == 6
    result = cp_als(dense, cap, layout="conv", n_init=3)
    assert result.kernel.layout == "conv"
    assert result.kernel.is_normalized()
    assert result.error <= 1e-3


def test_fc_bound_dominates_oracle(rng):
    for i in range(100):
        shape = tuple(int(d) for d in rng.integers(1, 4, size=4))
        layout = "fc_vectors" if i % 2 else "fc_matrices"
        kernel = random_kernel(shape, int(rng.integers(1, 5)), layout, seed=i)
        apply, adjoint, in_shape = linear_map(kernel)
        sigma = operator_norm_oracle(apply, in_shape, tol=1e-9, adjoint=adjoint)
        assert sigma <= opnorm_bound_fc(kernel) + 1e-9


def test_fc_bound_tight_for_rank_one():
    kernel = fc_vector_kernel(
        [3.0], [_unit([1, 2])], [_unit([1, 1, 1])], [_unit([2, 1])], [_unit([1])]
    )
    apply, adjoint, in_shape = linear_map(kernel)
    sigma = operator_norm_oracle(apply, in_shape, adjoint=adjoint)
    assert sigma == pytest.approx(3.0, rel=1e-8)
    assert opnorm_bound_fc(kernel) == pytest.approx(3.0)


def test_conv_bound_examples():
    kernel = conv_kernel([2.0], [[1.0]], [[1.0]], [[[1.0]]])
    assert opnorm_bound_conv(kernel, 1, 1) == pytest.approx(2.0)
    empty = conv_kernel(
        np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1, 1))
    )
    assert opnorm_bound_conv(empty, 4, 4) == 0.0
    with pytest.raises(ValueError):
        opnorm_bound_conv(random_kernel((2, 2, 2, 2), 2, "fc_vectors"), 2, 2)


def test_conv_bound_dominates_exact_norm(rng):
    for i in range(100):
        s, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        H, W = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        kernel = random_kernel((s, o, 3, 3), int(rng.integers(1, 6)), "conv", seed=i)
        exact = conv_operator_norm_exact(spatial_first(reconstruct(kernel)), H, W)
        assert exact <= opnorm_bound_conv(kernel, H, W) + 1e-9


def test_conv_oracle_agrees_with_exact_norm(rng):
    for i in range(100):
        s, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        H, W = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        rank = int(rng.integers(1, 6))
        kernel = random_kernel((s, o, 3, 3), rank, "conv", seed=100 + i)
        apply, adjoint, in_shape = linear_map(kernel, H, W)
        sigma = operator_norm_oracle(apply, in_shape, tol=1e-12, adjoint=adjoint)
        exact = conv_operator_norm_exact(spatial_first(reconstruct(kernel)), H, W)
        assert sigma == pytest.approx(exact, rel=1e-6)
        assert sigma <= opnorm_bound_conv(kernel, H, W) + 1e-9


def test_higher_conv_with_one_pair_reduces_to_conv():
    kernel = random_kernel((2, 3, 3, 3), 4, "conv", seed=3)
    higher = conv_to_higher(kernel)
    assert higher.layout == "higher_conv"
    assert opnorm_bound_higher_conv(higher, 5, 6) == pytest.approx(
        opnorm_bound_conv(kernel, 5, 6), rel=1e-12
    )
    np.testing.assert_allclose(
        reconstruct(higher), spatial_first(reconstruct(kernel)), atol=1e-12
    )


def test_higher_conv_bound_dominates_oracle(rng):
    for _ in range(100):
        rank = int(rng.integers(1, 4))
        c = rng.standard_normal((rank, 2, 2))
        channel = [rng.standard_normal((rank, 2, 2)) for _ in range(2)]
        kernel = normalize(higher_conv_kernel(rng.uniform(0.5, 1.5, rank), c, channel))
        apply, _, in_shape = linear_map(kernel, 3, 3)
        assert in_shape == (3, 3, 2, 2)
        sigma = operator_norm_oracle(apply, in_shape, tol=1e-9)
        assert sigma <= opnorm_bound_higher_conv(kernel, 3, 3) + 1e-9
