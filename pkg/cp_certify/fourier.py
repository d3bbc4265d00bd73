"""
Unitary multidimensional DFT and circular 2D convolution.

Convolution is circular over the two spatial axes and kernels are anchored
at spatial index (0, 0) before embedding into the H×W grid.
"""

from collections.abc import Sequence
from dataclasses import dataclass
import math

import numpy as np

from .exception import ShapeMismatch
from .tensor import ComplexTensor, DenseTensor


@dataclass(frozen=True)
class FrequencyGrid:
    H: int
    W: int

    def __post_init__(self):
        if self.H < 1 or self.W < 1:
            raise ShapeMismatch(f"invalid frequency grid {self.H}x{self.W}")

    @property
    def size(self) -> int:
        return self.H * self.W


def _axes(ndim: int, dims: Sequence[int]) -> tuple[int, ...]:
    axes = []
    for d in dims:
        if not -ndim <= d < ndim:
            raise ShapeMismatch(f"axis {d} out of range for a {ndim}-order tensor")
        axes.append(d % ndim)
    if len(set(axes)) != len(axes):
        raise ShapeMismatch(f"repeated axis in {tuple(dims)}")
    return tuple(axes)


def mdft(t: np.ndarray, dims: Sequence[int]) -> ComplexTensor:
    axes = _axes(t.ndim, dims)
    if not axes:
        return np.asarray(t, dtype=np.complex128).copy()
    return np.fft.fftn(t, axes=axes, norm="ortho")


def imdft(t: np.ndarray, dims: Sequence[int]) -> ComplexTensor:
    axes = _axes(t.ndim, dims)
    if not axes:
        return np.asarray(t, dtype=np.complex128).copy()
    return np.fft.ifftn(t, axes=axes, norm="ortho")


def embed_kernel(c: np.ndarray, H: int, W: int) -> np.ndarray:
    """
    Zero-pad the two leading (spatial) axes of a kernel to H×W.

    - `c`: Kernel of shape kx×ky×...
    - `H`: Grid height.
    - `W`: Grid width.
    """
    grid = FrequencyGrid(H, W)
    kx, ky = c.shape[:2]
    if kx > grid.H or ky > grid.W:
        raise ShapeMismatch(f"kernel {kx}x{ky} does not fit a {H}x{W} grid")
    out = np.zeros((grid.H, grid.W, *c.shape[2:]), dtype=c.dtype)
    out[:kx, :ky] = c
    return out


def conv2d_circular(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """
    Circular 2D convolution Y[i,j,t] = Σ_s Σ_{p,q} M[i−p, j−q, t, s] X[p, q, s].

    Leading batch axes of `x` are carried through. Higher-order channel
    layouts are supported: with `x` of shape (..., H, W, S1..Sm) the kernel
    is (kx, ky, T1..Tm, S1..Sm) and the output (..., H, W, T1..Tm).

    - `x`: Input tensor.
    - `m`: Kernel tensor.
    """
    m_order = (m.ndim - 2) // 2
    if m.ndim != 2 * m_order + 2 or m_order < 1:
        raise ShapeMismatch(f"malformed convolution kernel of shape {m.shape}")
    in_channels = m.shape[2 + m_order :]
    if x.ndim < 2 + m_order or tuple(x.shape[x.ndim - m_order :]) != in_channels:
        raise ShapeMismatch(
            f"input channels {x.shape[x.ndim - m_order:]} do not match kernel "
            f"channels {in_channels}"
        )
    h_axis = x.ndim - m_order - 2
    H, W = x.shape[h_axis], x.shape[h_axis + 1]
    kx, ky = m.shape[:2]
    if kx > H or ky > W:
        raise ShapeMismatch(f"kernel {kx}x{ky} does not fit a {H}x{W} grid")
    x_axes = list(range(x.ndim - m_order, x.ndim))
    m_axes = list(range(m_order, 2 * m_order))
    out = None
    for u in range(kx):
        for v in range(ky):
            shifted = np.roll(x, shift=(u, v), axis=(h_axis, h_axis + 1))
            term = np.tensordot(shifted, m[u, v], axes=(x_axes, m_axes))
            out = term if out is None else out + term
    assert out is not None
    return out


def conv2d_circular_adjoint(y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """
    Adjoint of `conv2d_circular` for a first-order channel layout.

    - `y`: Output-shaped tensor (..., H, W, T).
    - `m`: Kernel (kx, ky, T, S).
    """
    kx, ky = m.shape[:2]
    out = None
    for u in range(kx):
        for v in range(ky):
            shifted = np.roll(y, shift=(-u, -v), axis=(-3, -2))
            term = shifted @ m[u, v]
            out = term if out is None else out + term
    assert out is not None
    return out


def depthwise_circular(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Per-channel circular convolution of (..., H, W, R) with filters (R, kx, ky).

    - `z`: Input tensor.
    - `c`: One spatial filter per channel.
    """
    out = np.zeros_like(z)
    for u in range(c.shape[1]):
        for v in range(c.shape[2]):
            out += np.roll(z, shift=(u, v), axis=(-3, -2)) * c[:, u, v]
    return out


def depthwise_circular_adjoint(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    for u in range(c.shape[1]):
        for v in range(c.shape[2]):
            out += np.roll(z, shift=(-u, -v), axis=(-3, -2)) * c[:, u, v]
    return out


def conv2d_fourier(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """
    Spectral evaluation of `conv2d_circular` for an (H, W, S) input through
    Ỹ[f,g,t] = √(HW) Σ_s M̃[f,g,t,s] X̃[f,g,s].

    - `x`: Input (H, W, S).
    - `m`: Kernel (kx, ky, T, S).
    """
    H, W = x.shape[:2]
    m_hat = mdft(embed_kernel(m, H, W), (0, 1))
    x_hat = mdft(x, (0, 1))
    y_hat = math.sqrt(H * W) * np.einsum("fgts,fgs->fgt", m_hat, x_hat)
    y = imdft(y_hat, (0, 1))
    if np.isrealobj(x) and np.isrealobj(m):
        return y.real
    return y


def spatial_spectrum(c: np.ndarray, H: int, W: int) -> DenseTensor:
    """
    Amplitudes |C̃_r^(f,g)| of a stack of spatial factors (R, kx, ky)
    embedded in an H×W grid.

    - `c`: Spatial factors.
    - `H`: Grid height.
    - `W`: Grid width.
    """
    embedded = embed_kernel(np.moveaxis(c, 0, -1), H, W)
    return np.abs(np.moveaxis(mdft(embedded, (0, 1)), -1, 0))


def frequency_slices(m: np.ndarray, H: int, W: int) -> ComplexTensor:
    """
    Frequency-slice matrices M̃^(f,g) of shape (H, W, T, S) for a kernel
    (kx, ky, T1..Tm, S1..Sm); channel groups are flattened.

    - `m`: Kernel.
    - `H`: Grid height.
    - `W`: Grid width.
    """
    m_order = (m.ndim - 2) // 2
    t = math.prod(m.shape[2 : 2 + m_order])
    s = math.prod(m.shape[2 + m_order :])
    m_hat = mdft(embed_kernel(m, H, W), (0, 1))
    return m_hat.reshape(H, W, t, s)


def conv_operator_norm_exact(m: np.ndarray, H: int, W: int) -> float:
    """
    Operator norm √(HW) max_{f,g} ‖M̃^(f,g)‖₂ of a circular convolution.

    - `m`: Kernel (kx, ky, T, S) or its higher-order form.
    - `H`: Grid height.
    - `W`: Grid width.
    """
    grid = FrequencyGrid(H, W)
    slices = frequency_slices(m, grid.H, grid.W)
    if slices.size == 0:
        return 0.0
    norms = np.linalg.norm(slices, ord=2, axis=(2, 3))
    return float(math.sqrt(grid.size) * norms.max())
