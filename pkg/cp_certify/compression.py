"""
Back-to-front rank selection, spectrum truncation and verification of the
relative output error of the compressed network.

For layer k the chosen rank is the smallest j with

    N_j^(k) · Π_{i>k} T^(i) ≤ (ε/n) · Π_{i≥k} g^(i)

where N is the noise bound (times the reshaping factor for FC layers), T the
operator-norm bound of an already compressed deeper layer (plus one for skip
connections) and g the layer growth min ‖X^(k+1)‖_F / ‖X^(k)‖_F.
"""

import math
from typing import TYPE_CHECKING, Optional

import numpy as np

from .cp import truncate
from .exception import InfeasiblePlan, NotDecomposed, ShapeMismatch, VerificationFailed
from .log import log
from .model import (
    ChainCheck,
    CompressionPlan,
    LayerPlan,
    Method,
    PropertyTable,
    Variant,
    VerificationReport,
)
from .network import NetworkModel, forward_dataset
from .properties import measure_properties

if TYPE_CHECKING:
    from .harness import Dataset

VERIFY_RTOL = 1e-9


def _select(
    table: PropertyTable, epsilon: float, method: Method
) -> CompressionPlan:
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    n = len(table.layers)
    plans: list[LayerPlan] = []
    deeper = 1.0
    growth_product = 1.0
    for props in reversed(table.layers):
        k = props.index
        if props.growth is None or props.growth <= 0.0:
            raise InfeasiblePlan(k, "layer growth is zero on the training set")
        growth_product *= props.growth
        rhs = epsilon / n * growth_product
        multiplier = props.rf if method == "fbr_fc" and props.rf is not None else 1.0
        chosen, lhs = 0, 0.0
        for j in range(1, props.rank + 1):
            chosen = j
            lhs = multiplier * props.nb[j] * deeper
            if lhs <= rhs:
                break
        bound = props.tf[chosen - 1] if chosen else 0.0
        if method == "fbrc_skip":
            bound += 1.0
        deeper *= bound
        log(
            "DEBUG",
            f"layer {k}: rank <y>{chosen}</y>/{props.rank} "
            f"(lhs {lhs:.4g} <= rhs {rhs:.4g})",
        )
        plans.append(
            LayerPlan(
                index=k,
                rank=props.rank,
                chosen_rank=chosen,
                lhs=lhs,
                rhs=rhs,
                operator_bound=bound,
            )
        )
    plans.reverse()
    return CompressionPlan(
        method=method, variant=table.variant, epsilon=epsilon, layers=plans
    )


def fbrc(table: PropertyTable, epsilon: float) -> CompressionPlan:
    """
    Rank selection for convolutional networks.

    - `table`: Properties measured on the training set.
    - `epsilon`: Target relative output error in (0, 1].
    """
    return _select(table, epsilon, "fbrc")


def fbr_fc(table: PropertyTable, epsilon: float) -> CompressionPlan:
    """
    Rank selection for reshaped fully-connected networks, where the noise
    bound is scaled by the reshaping factor.

    - `table`: Properties measured on the training set.
    - `epsilon`: Target relative output error in (0, 1].
    """
    return _select(table, epsilon, "fbr_fc")


def fbrc_skip(table: PropertyTable, epsilon: float) -> CompressionPlan:
    """
    Rank selection for networks with skip connections: every deeper layer
    contributes its operator-norm bound plus one.

    - `table`: Properties measured on the training set.
    - `epsilon`: Target relative output error in (0, 1].
    """
    return _select(table, epsilon, "fbrc_skip")


def threshold_plan(model: NetworkModel, threshold: float) -> CompressionPlan:
    """
    Amplitude cut-off: keep the components whose amplitude relative to the
    layer's largest one is at least `threshold`.

    - `model`: A network whose layers are all CP.
    - `threshold`: Relative cut-off τ ≥ 0; 0 keeps every component.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    plans = []
    for k, layer in enumerate(model.layers):
        if not layer.is_cp:
            raise NotDecomposed(k)
        lam = layer.kernel.lambdas
        if lam.size == 0 or lam[0] == 0.0:
            chosen = lam.size if threshold == 0 else 0
        else:
            chosen = int(np.count_nonzero(lam / lam[0] >= threshold))
        plans.append(LayerPlan(index=k, rank=lam.size, chosen_rank=chosen))
    return CompressionPlan(method="threshold", threshold=threshold, layers=plans)


def project(model: NetworkModel, plan: CompressionPlan) -> NetworkModel:
    """
    Truncate every layer's CP spectrum to the planned rank.

    - `model`: A network whose layers are all CP.
    - `plan`: Chosen rank per layer.
    """
    if len(plan.layers) != model.depth:
        raise ShapeMismatch(
            f"plan has {len(plan.layers)} layers, model has {model.depth}"
        )
    layers = []
    for k, (layer, lp) in enumerate(zip(model.layers, plan.layers)):
        if not layer.is_cp:
            raise NotDecomposed(k)
        layers.append(layer.with_weights(truncate(layer.kernel, lp.chosen_rank)))
    return model.replace_layers(layers)


def _relative(diff: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # zero references report the absolute deviation
    return np.divide(diff, ref, out=diff.copy(), where=ref > 0)


def _flat_norms(t: np.ndarray) -> np.ndarray:
    return np.linalg.norm(t.reshape(t.shape[0], -1), axis=1)


def output_residuals(
    model: NetworkModel, other: NetworkModel, dataset: "Dataset"
) -> np.ndarray:
    """
    Per-sample ‖M(X) − M̂(X)‖_F / ‖M(X)‖_F on the last layer's output.

    - `model`: Reference network.
    - `other`: Network compared against it.
    - `dataset`: Samples.
    """
    if model.input_shape != other.input_shape:
        raise ShapeMismatch(
            f"input shapes differ: {model.input_shape} and {other.input_shape}"
        )
    _, ref = forward_dataset(model, dataset.inputs)
    _, cmp = forward_dataset(other, dataset.inputs)
    a, b = ref.outputs[-1], cmp.outputs[-1]
    if a.shape != b.shape:
        raise ShapeMismatch(f"output shapes differ: {a.shape[1:]} and {b.shape[1:]}")
    return _relative(_flat_norms(a - b), _flat_norms(a))


def error_chain(
    model: NetworkModel,
    compressed: NetworkModel,
    dataset: "Dataset",
    table: PropertyTable,
    plan: CompressionPlan,
) -> list[ChainCheck]:
    """
    Measured relative deviation of every depth's activation against the
    layer-wise error coefficient Σ_{k<m} (N_k/g_k) Π_{k<l<m} (T_l/g_l).

    - `model`: Original network.
    - `compressed`: Projected network.
    - `dataset`: Samples the properties were measured on.
    - `table`: Measured properties.
    - `plan`: Plan that produced `compressed`.
    """
    _, ref = forward_dataset(model, dataset.inputs)
    _, cmp = forward_dataset(compressed, dataset.inputs)
    depth = model.depth
    ref_acts = [*ref.inputs[1:], ref.outputs[-1]]
    cmp_acts = [*cmp.inputs[1:], cmp.outputs[-1]]
    noise, bounds, growth = [], [], []
    for props, lp in zip(table.layers, plan.layers):
        scale = props.rf if props.rf is not None else 1.0
        noise.append(scale * props.nb[lp.chosen_rank])
        bound = props.tf[lp.chosen_rank - 1] if lp.chosen_rank else 0.0
        bounds.append(bound + (1.0 if props.skip else 0.0))
        growth.append(props.growth or 0.0)
    checks = []
    for m in range(1, depth + 1):
        norms = _flat_norms(ref_acts[m - 1])
        diffs = _flat_norms(ref_acts[m - 1] - cmp_acts[m - 1])
        valid = norms > 0
        measured = float(np.max(diffs[valid] / norms[valid])) if np.any(valid) else 0.0
        if any(g <= 0.0 for g in growth[:m]):
            checks.append(ChainCheck(depth=m, measured=measured, holds=True))
            continue
        coefficient = sum(
            noise[k]
            / growth[k]
            * math.prod(bounds[l] / growth[l] for l in range(k + 1, m))
            for k in range(m)
        )
        holds = measured <= coefficient * (1 + VERIFY_RTOL) + 1e-12
        checks.append(
            ChainCheck(depth=m, measured=measured, coefficient=coefficient, holds=holds)
        )
    return checks


def verify(
    model: NetworkModel,
    compressed: NetworkModel,
    dataset: "Dataset",
    epsilon: Optional[float] = None,
) -> VerificationReport:
    """
    Compare the outputs of two networks on every sample. With `epsilon`, a
    residual above ε raises `VerificationFailed`.

    - `model`: Reference network.
    - `compressed`: Network compared against it.
    - `dataset`: Samples.
    - `epsilon`: Required bound on the relative output deviation.
    """
    residuals = output_residuals(model, compressed, dataset)
    worst = int(np.argmax(residuals))
    report = VerificationReport(
        epsilon=epsilon,
        samples=len(residuals),
        max_residual=float(residuals[worst]),
        worst_sample=worst,
    )
    if epsilon is not None and report.max_residual > epsilon * (1 + VERIFY_RTOL):
        raise VerificationFailed(worst, report.max_residual, epsilon)
    return report


def perturbation(gamma: float, max_norm: float) -> tuple[float, Optional[float]]:
    """
    ε = γ / (2 max‖M(X)‖_F) clamped to (0, 1], with the unclamped value.

    - `gamma`: Margin, positive.
    - `max_norm`: Largest output norm on the training set.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    raw = gamma / (2.0 * max_norm) if max_norm > 0 else math.inf
    if raw > 1.0:
        log("WARNING", f"epsilon {raw:.4g} clamped to 1")
        return 1.0, raw if math.isfinite(raw) else None
    return raw, raw


def default_method(model: NetworkModel, skip_aware: bool = False) -> Method:
    if not model.is_conv:
        return "fbr_fc"
    if skip_aware:
        return "fbrc_skip"
    if model.has_skip:
        log("WARNING", "skip connections found, using skip-aware rank selection")
        return "fbrc_skip"
    return "fbrc"


def compress(
    model: NetworkModel,
    dataset: "Dataset",
    gamma: Optional[float] = None,
    epsilon: Optional[float] = None,
    method: Optional[Method] = None,
    variant: Variant = "per_frequency",
    skip_aware: bool = False,
) -> tuple[NetworkModel, CompressionPlan, VerificationReport]:
    """
    Measure properties, choose ranks for the perturbation set by `gamma` (or
    given as `epsilon`), truncate, and verify the relative output error on
    every training sample.

    - `model`: A network whose layers are all CP.
    - `dataset`: Training samples.
    - `gamma`: Margin γ > 0.
    - `epsilon`: Perturbation used directly instead of `gamma`.
    - `method`: Rank selection rule; chosen from the architecture if unset.
    - `variant`: tf/nb variant.
    - `skip_aware`: Force the skip-connection rule for conv networks.
    """
    if (gamma is None) == (epsilon is None):
        raise ValueError("exactly one of gamma and epsilon is required")
    table = measure_properties(model, dataset, variant)
    if gamma is not None:
        eps, raw = perturbation(gamma, table.max_output_norm)
    else:
        assert epsilon is not None
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        eps, raw = min(epsilon, 1.0), epsilon
        if epsilon > 1.0:
            log("WARNING", f"epsilon {epsilon:.4g} clamped to 1")
    method = method or default_method(model, skip_aware)
    plan = _select(table, eps, method)
    plan = plan.model_copy(update={"gamma": gamma, "epsilon_raw": raw})
    compressed = project(model, plan)
    report = verify(model, compressed, dataset, eps)
    report = report.model_copy(
        update={"chain": error_chain(model, compressed, dataset, table, plan)}
    )
    log(
        "INFO",
        f"compressed to ranks <y>{plan.ranks}</y>, max residual "
        f"{report.max_residual:.3e} (epsilon {eps:.3e})",
    )
    return compressed, plan, report