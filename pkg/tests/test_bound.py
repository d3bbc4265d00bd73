import numpy as np
import pytest

from cp_certify.bound import (
    component_cost,
    compression_ratio,
    effective_params,
    gamma_sweep,
    generalization_bound,
)
from cp_certify.cp import random_kernel
from cp_certify.harness import Dataset
from cp_certify.model import CompressionPlan, LayerPlan
from cp_certify.network import LayerSpec, NetworkModel, forward_dataset, predict


def _plan(*chosen, rank=None):
    layers = [
        LayerPlan(index=k, rank=rank or max(r, 1), chosen_rank=r)
        for k, r in enumerate(chosen)
    ]
    return CompressionPlan(method="fbrc", epsilon=0.1, layers=layers)


def _conv_model(s=3, o=8, rank=4, grid=4) -> NetworkModel:
    kernel = random_kernel((s, o, 3, 3), rank, "conv", seed=0)
    return NetworkModel((LayerSpec("conv_cp", kernel),), (grid, grid, s))


def test_component_costs():
    assert component_cost(_conv_model().layers[0]) == 21
    fc = LayerSpec("fc_cp", random_kernel((4, 4, 4, 4), 5, "fc_vectors"))
    assert component_cost(fc) == 17
    matrices = LayerSpec("fc_cp", random_kernel((2, 3, 4, 5), 2, "fc_matrices"))
    assert component_cost(matrices) == 2 * 4 + 3 * 5 + 1


def test_effective_params_examples():
    rows, d_eff = effective_params(_plan(4), _conv_model())
    assert d_eff == 84
    assert rows[0].original_params == 3 * 8 * 9
    fc = NetworkModel(
        (LayerSpec("fc_cp", random_kernel((4, 4, 4, 4), 5, "fc_vectors")),), (16,)
    )
    _, d_eff = effective_params(_plan(5), fc)
    assert d_eff == 85
    _, d_eff = effective_params(_plan(0, rank=4), _conv_model())
    assert d_eff == 0


@pytest.mark.parametrize(
    ("chosen", "params", "ratio"),
    [(339, 350526, 0.148572), (41, 42394, 0.017969), (120, 124080, 0.052592)],
)
def test_wide_layer_ratios(chosen, params, ratio):
    model = _conv_model(s=512, o=512, rank=1, grid=3)
    rows, d_eff = effective_params(_plan(chosen, rank=512), model)
    assert d_eff == params
    assert rows[0].original_params == 2359296
    assert rows[0].ratio == pytest.approx(ratio, abs=1e-6)
    assert compression_ratio(2359296, params) == rows[0].ratio


def test_effective_params_checks_depth():
    with pytest.raises(ValueError):
        effective_params(_plan(1, 1), _conv_model())


def test_bound_with_zero_training_error():
    model = _conv_model()
    rng = np.random.default_rng(3)
    inputs = rng.standard_normal((336, 4, 4, 3))
    data = Dataset(inputs, predict(model, inputs), 8)
    report = generalization_bound(model, data, 0.0, _plan(4))
    assert report.margin_loss == 0.0
    assert report.d_eff == 84
    assert report.complexity == pytest.approx(0.5)
    assert report.bound == pytest.approx(0.5)
    assert report.complexity_label == "unscaled complexity"


def test_bound_rejects_empty_dataset():
    data = Dataset(np.zeros((0, 4, 4, 3)), np.zeros(0), 8)
    with pytest.raises(ValueError):
        generalization_bound(_conv_model(), data, 1.0, _plan(4))


def test_gamma_sweep_trades_loss_for_complexity(cnn, image_data):
    data = image_data.with_labels(predict(cnn, image_data.inputs))
    scores, _ = forward_dataset(cnn, data.inputs)
    scale = float(np.max(np.abs(scores)))
    gammas = [scale * f for f in (0.01, 0.05, 0.2, 0.5, 1.0)]
    reports = gamma_sweep(cnn, data, gammas)
    d_eff = [r.d_eff for r in reports]
    losses = [r.margin_loss for r in reports]
    assert all(a >= b for a, b in zip(d_eff, d_eff[1:]))
    assert all(a <= b for a, b in zip(losses, losses[1:]))
    assert [r.gamma for r in reports] == gammas
