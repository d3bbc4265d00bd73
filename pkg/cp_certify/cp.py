"""
CP-parametrized kernels.

A `CPKernel` stores a weight kernel as Σ_r λ_r v_1^(r) ⊗ ⋯ ⊗ v_N^(r), where
each factor may cover a group of kernel axes (a matrix factor for the spatial
kx×ky block of a convolution, paired channel matrices for reshaped FC layers).
"""

from collections.abc import Sequence
from dataclasses import dataclass, field
import math
import string
from typing import Callable, Literal, Optional

import numpy as np
from scipy import linalg as la

from .exception import NonFiniteError, RankCapExceeded, ShapeMismatch
from .fourier import (
    conv2d_circular,
    conv2d_circular_adjoint,
    spatial_spectrum,
)
from .log import log
from .tensor import DenseTensor, as_dense

Layout = Literal["conv", "fc_vectors", "fc_matrices", "higher_conv", "generic"]

CONV_MODES = ((0,), (1,), (2, 3))
FC_VECTOR_MODES = ((0,), (1,), (2,), (3,))
FC_MATRIX_MODES = ((0, 2), (1, 3))


def higher_conv_modes(m: int) -> tuple[tuple[int, ...], ...]:
    return ((0, 1), *((2 + l, 2 + m + l) for l in range(m)))


def default_modes(layout: Layout, ndim: int) -> tuple[tuple[int, ...], ...]:
    if layout == "conv":
        return CONV_MODES
    if layout == "fc_vectors":
        return FC_VECTOR_MODES
    if layout == "fc_matrices":
        return FC_MATRIX_MODES
    if layout == "higher_conv":
        return higher_conv_modes((ndim - 2) // 2)
    return tuple((i,) for i in range(ndim))


@dataclass(frozen=True, eq=False)
class CPKernel:
    shape: tuple[int, ...]
    """
    Shape of the dense kernel this parametrizes
    """
    modes: tuple[tuple[int, ...], ...]
    """
    Kernel axes covered by each factor
    """
    lambdas: DenseTensor
    """
    Amplitudes, one per component
    """
    factors: tuple[DenseTensor, ...]
    """
    One array per mode, shaped (R, *mode_shape)
    """
    layout: Layout = "generic"

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        object.__setattr__(
            self, "modes", tuple(tuple(int(a) for a in m) for m in self.modes)
        )
        object.__setattr__(
            self, "lambdas", np.asarray(self.lambdas, dtype=np.float64).ravel()
        )
        object.__setattr__(
            self,
            "factors",
            tuple(np.asarray(f, dtype=np.float64) for f in self.factors),
        )
        axes = sorted(a for m in self.modes for a in m)
        if axes != list(range(len(self.shape))):
            raise ShapeMismatch(
                f"modes {self.modes} do not partition the axes of {self.shape}"
            )
        if len(self.factors) != len(self.modes):
            raise ShapeMismatch("one factor per mode is required")
        rank = self.lambdas.shape[0]
        for mode, factor in zip(self.modes, self.factors):
            expected = (rank, *(self.shape[a] for a in mode))
            if factor.shape != expected:
                raise ShapeMismatch(
                    f"factor of shape {factor.shape} does not match {expected}"
                )

    @property
    def rank(self) -> int:
        return int(self.lambdas.shape[0])

    @property
    def mode_shapes(self) -> list[tuple[int, ...]]:
        return [tuple(self.shape[a] for a in mode) for mode in self.modes]

    @property
    def mode_sizes(self) -> list[int]:
        return [math.prod(s) for s in self.mode_shapes]

    def replace(
        self, lambdas: np.ndarray, factors: Sequence[np.ndarray]
    ) -> "CPKernel":
        return CPKernel(self.shape, self.modes, lambdas, tuple(factors), self.layout)

    def is_normalized(self, atol: float = 1e-10) -> bool:
        lam = self.lambdas
        if np.any(lam < 0) or np.any(np.diff(lam) > 0):
            return False
        for f in self.factors:
            norms = np.linalg.norm(f.reshape(self.rank, -1), axis=1)
            if not np.allclose(norms, 1.0, rtol=0.0, atol=atol):
                return False
        return True


def conv_kernel(lambdas, a, b, c) -> CPKernel:
    """
    Build a convolutional CP kernel Σ λ_r a_r ⊗ b_r ⊗ C_r of shape (s, o, kx, ky).

    - `lambdas`: Amplitudes (R,).
    - `a`: Input-channel factors (R, s).
    - `b`: Output-channel factors (R, o).
    - `c`: Spatial factors (R, kx, ky).
    """
    a, b, c = np.asarray(a), np.asarray(b), np.asarray(c)
    shape = (a.shape[1], b.shape[1], c.shape[1], c.shape[2])
    return CPKernel(shape, CONV_MODES, lambdas, (a, b, c), "conv")


def fc_vector_kernel(lambdas, a, b, c, d) -> CPKernel:
    a, b, c, d = (np.asarray(v) for v in (a, b, c, d))
    shape = (a.shape[1], b.shape[1], c.shape[1], d.shape[1])
    return CPKernel(shape, FC_VECTOR_MODES, lambdas, (a, b, c, d), "fc_vectors")


def fc_matrix_kernel(lambdas, k1, k2) -> CPKernel:
    """
    Build a reshaped FC kernel Σ λ_r K¹_r ⊗ K²_r of shape (s1, s2, t1, t2).

    - `lambdas`: Amplitudes (R,).
    - `k1`: Factors (R, s1, t1).
    - `k2`: Factors (R, s2, t2).
    """
    k1, k2 = np.asarray(k1), np.asarray(k2)
    shape = (k1.shape[1], k2.shape[1], k1.shape[2], k2.shape[2])
    return CPKernel(shape, FC_MATRIX_MODES, lambdas, (k1, k2), "fc_matrices")


def higher_conv_kernel(lambdas, c, channel_factors: Sequence[np.ndarray]) -> CPKernel:
    """
    Build a higher-order convolutional kernel of shape
    (kx, ky, T1..Tm, S1..Sm) with one channel matrix (R, T_l, S_l) per pair.

    - `lambdas`: Amplitudes (R,).
    - `c`: Spatial factors (R, kx, ky).
    - `channel_factors`: Paired channel matrices.
    """
    c = np.asarray(c)
    ks = [np.asarray(k) for k in channel_factors]
    m = len(ks)
    shape = (
        c.shape[1],
        c.shape[2],
        *(k.shape[1] for k in ks),
        *(k.shape[2] for k in ks),
    )
    return CPKernel(shape, higher_conv_modes(m), lambdas, (c, *ks), "higher_conv")


def reconstruct(kernel: CPKernel) -> DenseTensor:
    if kernel.rank == 0:
        return np.zeros(kernel.shape)
    letters = string.ascii_letters[: len(kernel.modes)]
    flat = [f.reshape(kernel.rank, -1) for f in kernel.factors]
    expr = ",".join(f"z{c}" for c in letters) + ",z->" + letters
    full = np.einsum(expr, *flat, kernel.lambdas, optimize=True)
    grouped_shape = [d for s in kernel.mode_shapes for d in s]
    order = [a for m in kernel.modes for a in m]
    return np.transpose(full.reshape(grouped_shape), np.argsort(order))


@dataclass(frozen=True)
class Renormalization:
    kernel: CPKernel
    index: np.ndarray
    """
    Original component index of every kept component, in the new order
    """
    sign: np.ndarray
    """
    Sign folded into the first factor of every kept component
    """
    dropped: int = 0


def renormalize(kernel: CPKernel) -> Renormalization:
    """
    Normalize a kernel and report how components were moved.

    - `kernel`: A possibly unnormalized kernel.
    """
    rank = kernel.rank
    norms = np.stack(
        [np.linalg.norm(f.reshape(rank, -1), axis=1) for f in kernel.factors]
    ) if rank else np.ones((len(kernel.factors), 0))
    scale = norms.prod(axis=0)
    keep = np.flatnonzero(scale > 0)
    dropped = rank - keep.size
    if dropped:
        log("WARNING", f"dropped {dropped} component(s) with a zero factor")
    lam = kernel.lambdas[keep] * scale[keep]
    factors = []
    for n, f in enumerate(kernel.factors):
        kept = f[keep]
        shape = (keep.size,) + (1,) * (f.ndim - 1)
        factors.append(kept / norms[n, keep].reshape(shape))
    sign = np.where(lam < 0, -1.0, 1.0)
    lam = np.abs(lam)
    factors[0] = factors[0] * sign.reshape((keep.size,) + (1,) * (factors[0].ndim - 1))
    order = np.argsort(-lam, kind="stable")
    result = kernel.replace(lam[order], [f[order] for f in factors])
    return Renormalization(result, keep[order], sign[order], dropped)


def normalize(kernel: CPKernel) -> CPKernel:
    return renormalize(kernel).kernel


def truncate(kernel: CPKernel, rank: int) -> CPKernel:
    if not 0 <= rank <= kernel.rank:
        raise ValueError(f"cannot keep {rank} of {kernel.rank} components")
    return kernel.replace(
        kernel.lambdas[:rank], [f[:rank] for f in kernel.factors]
    )


def rank_cap(mode_sizes: Sequence[int]) -> int:
    """
    Upper bound on the CP rank of a tensor with the given grouped-mode sizes:
    min over modes of the product of all other mode sizes.

    - `mode_sizes`: Flattened size of every mode.
    """
    return min(
        math.prod(s for m, s in enumerate(mode_sizes) if m != n)
        for n in range(len(mode_sizes))
    )


def polyadic_rank(shape: Sequence[int], layout: Layout) -> int:
    modes = default_modes(layout, len(shape))
    return rank_cap([math.prod(shape[a] for a in m) for m in modes])


@dataclass
class ALSResult:
    kernel: CPKernel
    error: float
    """
    Relative reconstruction error ‖T − reconstruct‖_F / ‖T‖_F
    """
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _mttkrp(t: np.ndarray, factors: list[np.ndarray], n: int) -> np.ndarray:
    letters = string.ascii_letters[: t.ndim]
    operands = [t]
    terms = [letters]
    for m, f in enumerate(factors):
        if m != n:
            operands.append(f)
            terms.append(f"{letters[m]}z")
    expr = ",".join(terms) + f"->{letters[n]}z"
    return np.einsum(expr, *operands, optimize=True)


def _recon_grouped(lam: np.ndarray, factors: list[np.ndarray]) -> np.ndarray:
    letters = string.ascii_letters[: len(factors)]
    expr = ",".join(f"{c}z" for c in letters) + ",z->" + letters
    return np.einsum(expr, *factors, lam, optimize=True)


def _init_factors(sizes: Sequence[int], rank: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    factors = [rng.random((size, rank)) for size in sizes]
    return [f / np.linalg.norm(f, axis=0) for f in factors]


def _als_run(
    t: np.ndarray, rank: int, tol: float, max_iter: int, seed: int
) -> tuple[np.ndarray, list[np.ndarray], list[float], bool]:
    norm = np.linalg.norm(t)
    factors = _init_factors(t.shape, rank, seed)
    lam = np.ones(rank)
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        for n in range(t.ndim):
            gram = np.ones((rank, rank))
            for m, f in enumerate(factors):
                if m != n:
                    gram *= f.T @ f
            rhs = _mttkrp(t, factors, n)
            sol = la.lstsq(gram, rhs.T)[0].T
            lam = np.linalg.norm(sol, axis=0)
            nz = lam > 0
            sol[:, nz] /= lam[nz]
            factors[n] = sol
        err = float(np.linalg.norm(t - _recon_grouped(lam, factors)) / norm)
        history.append(err)
        log("TRACE", f"ALS sweep {len(history)}: relative error {err:.3e}")
        if len(history) > 1 and history[-2] - err < tol:
            converged = True
            break
        if err == 0.0:
            converged = True
            break
    return lam, factors, history, converged


def cp_als(
    t: np.ndarray,
    rank: int,
    modes: Optional[Sequence[Sequence[int]]] = None,
    tol: float = 1e-10,
    max_iter: int = 2000,
    seed: int = 0,
    n_init: int = 1,
    layout: Layout = "generic",
) -> ALSResult:
    """
    CP decomposition by alternating least squares.

    - `t`: The tensor to decompose.
    - `rank`: Number of components R.
    - `modes`: Axis groups that form one CP mode each; defaults to the
      grouping of `layout`.
    - `tol`: Stop when one sweep improves the relative error by less.
    - `max_iter`: Sweep budget per start.
    - `seed`: Seed of the uniform factor initialization.
    - `n_init`: Number of seeded starts, the best one is kept.
    - `layout`: Layout tag of the resulting kernel.
    """
    try:
        t = as_dense(t)
    except NonFiniteError:
        raise NonFiniteError(
            "cannot decompose a tensor with non-finite entries"
        ) from None
    if modes is None:
        modes = default_modes(layout, t.ndim)
    modes = tuple(tuple(int(a) for a in m) for m in modes)
    order = [a for m in modes for a in m]
    if sorted(order) != list(range(t.ndim)):
        raise ShapeMismatch(f"modes {modes} do not partition the axes of {t.shape}")
    sizes = [math.prod(t.shape[a] for a in m) for m in modes]
    if rank < 1:
        raise ValueError("rank must be at least 1")
    cap = rank_cap(sizes)
    if rank > cap:
        raise RankCapExceeded(rank, cap)
    grouped = np.transpose(t, order).reshape(sizes)
    mode_shapes = [tuple(t.shape[a] for a in m) for m in modes]

    def to_kernel(lam: np.ndarray, factors: list[np.ndarray]) -> CPKernel:
        stacked = [f.T.reshape(rank, *s) for f, s in zip(factors, mode_shapes)]
        return CPKernel(t.shape, modes, lam, stacked, layout)

    if np.linalg.norm(grouped) == 0.0:
        factors = _init_factors(sizes, rank, seed)
        kernel = to_kernel(np.zeros(rank), factors)
        return ALSResult(kernel, 0.0, [0.0], 0, True)

    best: Optional[tuple[np.ndarray, list[np.ndarray], list[float], bool]] = None
    for start in range(n_init):
        run = _als_run(grouped, rank, tol, max_iter, seed + start)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    assert best is not None
    lam, factors, history, converged = best
    kernel = normalize(to_kernel(lam, factors))
    error = float(np.linalg.norm(t - reconstruct(kernel)) / np.linalg.norm(t))
    if not converged:
        log(
            "DEBUG",
            f"ALS used its full budget of {max_iter} sweeps (error {error:.3e})",
        )
    return ALSResult(kernel, error, history, len(history), converged)


def random_kernel(
    shape: Sequence[int],
    rank: int,
    layout: Layout = "generic",
    seed: int = 0,
    scale: float = 1.0,
) -> CPKernel:
    """
    Normalized kernel with Gaussian factors and amplitudes drawn from
    scale·U(0.5, 1.5).

    - `shape`: Dense kernel shape.
    - `rank`: Number of components.
    - `layout`: Layout tag, which fixes the mode grouping.
    - `seed`: Random seed.
    - `scale`: Typical amplitude.
    """
    rng = np.random.default_rng(seed)
    modes = default_modes(layout, len(shape))
    factors = [
        rng.standard_normal((rank, *(shape[a] for a in m))) for m in modes
    ]
    lambdas = scale * rng.uniform(0.5, 1.5, size=rank)
    return normalize(CPKernel(tuple(shape), modes, lambdas, factors, layout))


def spatial_factor(kernel: CPKernel) -> np.ndarray:
    if kernel.layout == "conv":
        return kernel.factors[2]
    if kernel.layout == "higher_conv":
        return kernel.factors[0]
    raise ValueError(f"a {kernel.layout} kernel has no spatial factor")


def component_spectra(kernel: CPKernel, H: int, W: int) -> np.ndarray:
    """
    Amplitudes |C̃_r^(f,g)| of every component's spatial factor, (R, H, W).

    - `kernel`: A conv or higher-order conv kernel.
    - `H`: Grid height.
    - `W`: Grid width.
    """
    return spatial_spectrum(spatial_factor(kernel), H, W)


def opnorm_bound_fc(kernel: CPKernel) -> float:
    return float(np.sum(np.abs(kernel.lambdas)))


def _spectral_sum(kernel: CPKernel, H: int, W: int) -> float:
    if kernel.rank == 0:
        return 0.0
    peaks = component_spectra(kernel, H, W).reshape(kernel.rank, -1).max(axis=1)
    return float(math.sqrt(H * W) * np.sum(np.abs(kernel.lambdas) * peaks))


def opnorm_bound_conv(kernel: CPKernel, H: int, W: int) -> float:
    if kernel.layout != "conv":
        raise ValueError(f"expected a conv kernel, got {kernel.layout}")
    return _spectral_sum(kernel, H, W)


def opnorm_bound_higher_conv(kernel: CPKernel, H: int, W: int) -> float:
    if kernel.layout != "higher_conv":
        raise ValueError(f"expected a higher-order conv kernel, got {kernel.layout}")
    return _spectral_sum(kernel, H, W)


def conv_to_higher(kernel: CPKernel) -> CPKernel:
    """
    Rewrite a conv kernel (a, b, C) as the m=1 higher-order form with channel
    matrices b_r a_rᵀ.

    - `kernel`: A conv kernel.
    """
    a, b, c = kernel.factors
    channel = np.einsum("zo,zs->zos", b, a)
    return higher_conv_kernel(kernel.lambdas, c, [channel])


def spatial_first(dense: np.ndarray) -> np.ndarray:
    """
    Reorder a dense conv kernel from (s, o, kx, ky) to the (kx, ky, o, s)
    layout of `conv2d_circular`.

    - `dense`: Dense conv kernel.
    """
    return np.transpose(dense, (2, 3, 1, 0))


def linear_map(
    kernel: CPKernel, H: int = 1, W: int = 1
) -> tuple[Callable, Optional[Callable], tuple[int, ...]]:
    """
    The linear map a kernel implements, its adjoint when cheap, and its
    input shape.

    - `kernel`: The kernel.
    - `H`: Grid height (convolutions only).
    - `W`: Grid width (convolutions only).
    """
    dense = reconstruct(kernel)
    if kernel.layout == "conv":
        m = spatial_first(dense)
        return (
            lambda x: conv2d_circular(x, m),
            lambda y: conv2d_circular_adjoint(y, m),
            (H, W, kernel.shape[0]),
        )
    if kernel.layout in ("fc_vectors", "fc_matrices"):
        return (
            lambda x: np.einsum("abcd,ab->cd", dense, x),
            lambda y: np.einsum("abcd,cd->ab", dense, y),
            (kernel.shape[0], kernel.shape[1]),
        )
    if kernel.layout == "higher_conv":
        m = (len(kernel.shape) - 2) // 2
        return (
            lambda x: conv2d_circular(x, dense),
            None,
            (H, W, *kernel.shape[2 + m :]),
        )
    raise ValueError(f"a {kernel.layout} kernel has no associated linear map")
