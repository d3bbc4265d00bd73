"""
Dense tensor arithmetic.

Tensors are numpy arrays: `DenseTensor` is float64, `ComplexTensor` is
complex128, both C-ordered (last index fastest).
"""

from collections.abc import Sequence
from functools import reduce
import math
from typing import Callable, Optional, Union

import numpy as np
import numpy.typing as npt

from .exception import ConvergenceError, NonFiniteError, ShapeMismatch
from .log import log

DenseTensor = npt.NDArray[np.float64]
ComplexTensor = npt.NDArray[np.complex128]
AnyTensor = Union[DenseTensor, ComplexTensor]
LinearMap = Callable[[np.ndarray], np.ndarray]


def as_dense(data: npt.ArrayLike, finite: bool = True) -> DenseTensor:
    """
    Convert array-like data to a contiguous float64 tensor.

    - `data`: Nested sequences or an array.
    - `finite`: Reject NaN and Inf entries.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if finite and not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor has non-finite entries")
    return arr


def outer_product(vectors: Sequence[npt.ArrayLike]) -> DenseTensor:
    if len(vectors) == 0:
        raise ShapeMismatch("outer product of an empty list of vectors")
    arrays = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if any(a.size == 0 for a in arrays):
        raise ShapeMismatch("outer product of an empty vector")
    return reduce(np.multiply.outer, arrays)


def kronecker(a: npt.ArrayLike, b: npt.ArrayLike) -> DenseTensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch("kronecker product expects two matrices")
    if a.size == 0 or b.size == 0:
        raise ShapeMismatch("kronecker product of an empty matrix")
    return np.kron(a, b)


def frobenius_norm(t: npt.ArrayLike) -> float:
    return float(np.linalg.norm(np.asarray(t).ravel()))


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = tuple(int(d) for d in new_shape)
    if math.prod(new_shape) != t.size:
        raise ShapeMismatch(f"cannot reshape {t.shape} into {new_shape}")
    return np.reshape(t, new_shape)


def matricize(
    t: np.ndarray, row_dims: Sequence[int], col_dims: Sequence[int]
) -> np.ndarray:
    """
    Group tensor axes into the rows and columns of a matrix.

    - `t`: The tensor.
    - `row_dims`: Axes that index rows, slowest first.
    - `col_dims`: Axes that index columns, slowest first.
    """
    axes = [*row_dims, *col_dims]
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeMismatch(
            f"row {tuple(row_dims)} and column {tuple(col_dims)} axes must "
            f"partition the {t.ndim} axes"
        )
    rows = math.prod(t.shape[d] for d in row_dims)
    cols = math.prod(t.shape[d] for d in col_dims)
    return np.transpose(t, axes).reshape(rows, cols)


def dense_matrix(apply: LinearMap, in_shape: Sequence[int]) -> DenseTensor:
    """
    Materialize a linear map by applying it to every basis tensor.

    - `apply`: The linear map.
    - `in_shape`: Shape of the map's input.
    """
    n = math.prod(in_shape)
    columns = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        columns.append(np.asarray(apply(e.reshape(in_shape))).ravel())
    return np.stack(columns, axis=1)


def operator_norm_oracle(
    apply: LinearMap,
    in_shape: Sequence[int],
    tol: float = 1e-12,
    max_iter: int = 100000,
    seed: int = 0,
    adjoint: Optional[LinearMap] = None,
) -> float:
    """
    Estimate the largest singular value of a linear map by power iteration
    on the map composed with its adjoint.

    The returned value is ‖A x‖ for the final unit iterate, so it never
    exceeds the true operator norm.

    - `apply`: The linear map.
    - `in_shape`: Shape of the map's input.
    - `tol`: Relative change between iterates that counts as converged.
    - `max_iter`: Iteration budget.
    - `seed`: Seed of the random start.
    - `adjoint`: The adjoint map; built from basis tensors when omitted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    in_shape = tuple(in_shape)
    if adjoint is None:
        matrix = dense_matrix(apply, in_shape)
        gram = matrix.T @ matrix

        def forward(x: np.ndarray) -> np.ndarray:
            return matrix @ x

        def normal(x: np.ndarray) -> np.ndarray:
            return gram @ x

    else:

        def forward(x: np.ndarray) -> np.ndarray:
            return np.asarray(apply(x.reshape(in_shape))).ravel()

        def normal(x: np.ndarray) -> np.ndarray:
            return np.asarray(adjoint(apply(x.reshape(in_shape)))).ravel()

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(math.prod(in_shape))
    x /= np.linalg.norm(x)
    sigma = float(np.linalg.norm(forward(x)))
    for it in range(max_iter):
        z = normal(x)
        z_norm = np.linalg.norm(z)
        if z_norm == 0.0:
            return 0.0
        x = z / z_norm
        new_sigma = float(np.linalg.norm(forward(x)))
        if abs(new_sigma - sigma) <= tol * new_sigma:
            log("TRACE", f"power iteration converged after {it + 1} steps")
            return new_sigma
        sigma = new_sigma
    raise ConvergenceError(
        f"power iteration did not converge within {max_iter} steps", last=sigma
    )
