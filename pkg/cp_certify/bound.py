"""
Effective parameter counts and the compression-based generalization bound
L̂_γ(M) + √(d_eff / m).
"""

from collections.abc import Sequence
import math
from typing import TYPE_CHECKING, Optional

from .compression import compress
from .model import BoundReport, CompressionPlan, LayerBound, Method, Variant
from .network import LayerSpec, NetworkModel, margin_loss

if TYPE_CHECKING:
    from .harness import Dataset


def component_cost(layer: LayerSpec) -> int:
    """
    Parameters per CP component: s+o+kx·ky+1 for convolutions, s1+s2+t1+t2+1
    for FC vectors and s1·t1+s2·t2+1 for FC matrices.

    - `layer`: The layer.
    """
    shape = layer.kernel_shape
    if layer.is_conv:
        s, o, kx, ky = shape
        return s + o + kx * ky + 1
    s1, s2, t1, t2 = shape
    if layer.is_cp and layer.kernel.layout == "fc_matrices":
        return s1 * t1 + s2 * t2 + 1
    return s1 + s2 + t1 + t2 + 1


def original_params(layer: LayerSpec) -> int:
    return math.prod(layer.kernel_shape)


def effective_params(
    plan: CompressionPlan, model: NetworkModel
) -> tuple[list[LayerBound], int]:
    """
    Per-layer original and effective parameter counts and the total d_eff.

    - `plan`: Chosen ranks.
    - `model`: The network the plan was made for.
    """
    if len(plan.layers) != model.depth:
        raise ValueError(
            f"plan has {len(plan.layers)} layers, model has {model.depth}"
        )
    rows = []
    for k, (layer, lp) in enumerate(zip(model.layers, plan.layers)):
        original = original_params(layer)
        effective = lp.chosen_rank * component_cost(layer)
        rows.append(
            LayerBound(
                index=k,
                original_params=original,
                effective_params=effective,
                ratio=compression_ratio(original, effective),
            )
        )
    return rows, sum(row.effective_params for row in rows)


def compression_ratio(original: int, effective: int) -> float:
    return effective / original if original else 0.0


def generalization_bound(
    model: NetworkModel, dataset: "Dataset", gamma: float, plan: CompressionPlan
) -> BoundReport:
    """
    Margin loss of the original network plus the unscaled complexity term.

    - `model`: Original network.
    - `dataset`: Training samples.
    - `gamma`: Margin γ ≥ 0.
    - `plan`: Compression plan for `model`.
    """
    m = len(dataset.inputs)
    if m == 0:
        raise ValueError("empty dataset")
    loss = margin_loss(model, dataset, gamma)
    rows, d_eff = effective_params(plan, model)
    complexity = math.sqrt(d_eff / m)
    return BoundReport(
        gamma=gamma,
        samples=m,
        margin_loss=loss,
        d_orig=sum(row.original_params for row in rows),
        d_eff=d_eff,
        complexity=complexity,
        bound=loss + complexity,
        layers=rows,
    )


def gamma_sweep(
    model: NetworkModel,
    dataset: "Dataset",
    gammas: Sequence[float],
    variant: Variant = "per_frequency",
    method: Optional[Method] = None,
) -> list[BoundReport]:
    """
    Compress and bound the network at every margin of a grid.

    - `model`: A network whose layers are all CP.
    - `dataset`: Training samples.
    - `gammas`: Positive margins.
    - `variant`: tf/nb variant.
    - `method`: Rank selection rule; chosen from the architecture if unset.
    """
    reports = []
    for gamma in gammas:
        _, plan, _ = compress(
            model, dataset, gamma=gamma, method=method, variant=variant
        )
        reports.append(generalization_bound(model, dataset, gamma, plan))
    return reports
