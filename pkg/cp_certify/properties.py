"""
Measurable per-layer compressibility properties of a trained CP network.

Tensorization factors and noise bounds are operator-norm bounds of the
retained and pruned parts of a kernel; convolution layers therefore carry the
√(HW) factor of the spectral form.
"""

import math
from typing import TYPE_CHECKING, Optional

import numpy as np

from .cp import CPKernel, component_spectra
from .exception import NotDecomposed
from .log import log
from .model import LayerProperties, PropertyTable, Variant
from .network import ActivationTrace, NetworkModel, forward_dataset

if TYPE_CHECKING:
    from .harness import Dataset

VARIANTS: tuple[Variant, ...] = ("per_frequency", "per_component")


def _weighted_spectra(kernel: CPKernel, H: int, W: int) -> np.ndarray:
    amps = component_spectra(kernel, H, W).reshape(kernel.rank, -1)
    return np.abs(kernel.lambdas)[:, None] * amps


def tf_profile(
    kernel: CPKernel, H: int = 1, W: int = 1, variant: Variant = "per_frequency"
) -> np.ndarray:
    """
    Tensorization factors tf_1..tf_R of a kernel.

    - `kernel`: Normalized CP kernel.
    - `H`: Grid height (convolutions only).
    - `W`: Grid width (convolutions only).
    - `variant`: `per_frequency` takes the maximum over frequencies of the
      summed spectrum, `per_component` sums per-component maxima.
    """
    if kernel.layout.startswith("fc") or kernel.rank == 0:
        return np.cumsum(np.abs(kernel.lambdas))
    weighted = _weighted_spectra(kernel, H, W)
    scale = math.sqrt(H * W)
    if variant == "per_frequency":
        return scale * np.cumsum(weighted, axis=0).max(axis=1)
    return scale * np.cumsum(weighted.max(axis=1))


def nb_profile(
    kernel: CPKernel, H: int = 1, W: int = 1, variant: Variant = "per_frequency"
) -> np.ndarray:
    """
    Tensor noise bounds nb_0..nb_R: the same sums over components j+1..R.

    - `kernel`: Normalized CP kernel.
    - `H`: Grid height.
    - `W`: Grid width.
    - `variant`: See `tf_profile`.
    """
    if kernel.layout.startswith("fc") or kernel.rank == 0:
        tails = np.cumsum(np.abs(kernel.lambdas)[::-1])[::-1]
        return np.append(tails, 0.0)
    weighted = _weighted_spectra(kernel, H, W)
    scale = math.sqrt(H * W)
    if variant == "per_frequency":
        tails = np.cumsum(weighted[::-1], axis=0)[::-1].max(axis=1)
    else:
        tails = np.cumsum(weighted.max(axis=1)[::-1])[::-1]
    return np.append(scale * tails, 0.0)


def tensorization_factor(
    kernel: CPKernel,
    j: int,
    H: int = 1,
    W: int = 1,
    variant: Variant = "per_frequency",
) -> float:
    if not 1 <= j <= kernel.rank:
        raise ValueError(f"j={j} outside 1..{kernel.rank}")
    return float(tf_profile(kernel, H, W, variant)[j - 1])


def tensor_noise_bound(
    kernel: CPKernel,
    j: int,
    H: int = 1,
    W: int = 1,
    variant: Variant = "per_frequency",
) -> float:
    if not 0 <= j <= kernel.rank:
        raise ValueError(f"j={j} outside 0..{kernel.rank}")
    return float(nb_profile(kernel, H, W, variant)[j])


def _next_input(trace: ActivationTrace, k: int) -> np.ndarray:
    if k + 1 < len(trace.inputs):
        return trace.inputs[k + 1]
    return trace.outputs[-1]


def _flat_norms(t: np.ndarray) -> np.ndarray:
    return np.linalg.norm(t.reshape(t.shape[0], -1), axis=1)


def layer_growth(trace: ActivationTrace, k: int) -> tuple[Optional[float], int]:
    """
    min over samples of ‖X^(k+1)‖_F / ‖X^(k)‖_F, with the last layer's output
    in place of X^(n), and the number of samples skipped for a zero input.

    - `trace`: Activations over the dataset.
    - `k`: Layer index.
    """
    x_norm = _flat_norms(trace.inputs[k])
    next_norm = _flat_norms(_next_input(trace, k))
    valid = x_norm > 0
    excluded = int(np.count_nonzero(~valid))
    if excluded:
        log("DEBUG", f"layer {k}: {excluded} sample(s) with zero input excluded")
    if not np.any(valid):
        return None, excluded
    return float(np.min(next_norm[valid] / x_norm[valid])), excluded


def _cushion(
    model: NetworkModel, growth: Optional[float], norm: float
) -> Optional[float]:
    if growth is None or norm == 0.0:
        return None
    if model.is_conv:
        H, W = model.grid
        return growth * math.sqrt(H * W) / norm
    return growth / norm


def layer_cushion(model: NetworkModel, k: int, dataset: "Dataset") -> Optional[float]:
    """
    Largest lc with lc·‖M‖_F·‖X^(k)‖_F ≤ √(HW)·‖X^(k+1)‖_F on every sample
    (FC: lc·‖A‖_F·‖x^(k)‖ ≤ ‖x^(k+1)‖). `None` when undefined.

    - `model`: The network.
    - `k`: Layer index.
    - `dataset`: Training samples.
    """
    _, trace = forward_dataset(model, dataset.inputs)
    growth, _ = layer_growth(trace, k)
    norm = float(np.linalg.norm(model.layers[k].dense_kernel()))
    return _cushion(model, growth, norm)


def _reshaping(trace: ActivationTrace, k: int) -> float:
    x = trace.inputs[k]
    fro = np.linalg.norm(x, axis=(1, 2))
    valid = fro > 0
    if not np.any(valid):
        return 1.0
    spectral = np.linalg.norm(x[valid], ord=2, axis=(1, 2))
    return float(min(1.0, np.max(spectral / fro[valid])))


def reshaping_factor(model: NetworkModel, k: int, dataset: "Dataset") -> float:
    """
    Smallest rf with ‖X^(k)‖₂ ≤ rf·‖X^(k)‖_F for every matricized input of an
    FC layer.

    - `model`: An FC network.
    - `k`: Layer index.
    - `dataset`: Training samples.
    """
    if model.is_conv:
        raise ValueError("the reshaping factor is defined for FC layers only")
    _, trace = forward_dataset(model, dataset.inputs)
    return _reshaping(trace, k)


def max_output_norm(model: NetworkModel, dataset: "Dataset") -> float:
    _, trace = forward_dataset(model, dataset.inputs)
    return float(np.max(_flat_norms(trace.outputs[-1])))


def measure_properties(
    model: NetworkModel, dataset: "Dataset", variant: Variant = "per_frequency"
) -> PropertyTable:
    """
    Measure every layer's properties on a dataset.

    - `model`: A network whose layers are all CP.
    - `dataset`: Training samples.
    - `variant`: tf/nb variant for convolution layers.
    """
    _, trace = forward_dataset(model, dataset.inputs)
    H, W = model.grid
    layers = []
    for k, layer in enumerate(model.layers):
        if not layer.is_cp:
            raise NotDecomposed(k)
        kernel = layer.kernel
        norm = float(np.linalg.norm(layer.dense_kernel()))
        growth, excluded = layer_growth(trace, k)
        lc = _cushion(model, growth, norm)
        layers.append(
            LayerProperties(
                index=k,
                kind=layer.base.kind,
                skip=layer.is_skip,
                rank=kernel.rank,
                grid=(H, W),
                tf=tf_profile(kernel, H, W, variant).tolist(),
                nb=nb_profile(kernel, H, W, variant).tolist(),
                frobenius_norm=norm,
                growth=growth,
                lc=lc,
                rf=None if model.is_conv else _reshaping(trace, k),
                excluded_samples=excluded,
            )
        )
        log(
            "DEBUG",
            f"layer {k}: R={kernel.rank} ‖M‖_F={norm:.4g} "
            f"lc={'-' if lc is None else f'{lc:.4g}'}",
        )
    return PropertyTable(
        variant=variant,
        samples=len(dataset.inputs),
        max_output_norm=float(np.max(_flat_norms(trace.outputs[-1]))),
        layers=layers,
    )
