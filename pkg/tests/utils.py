import numpy as np

from cp_certify.network import (
    NetworkModel,
    backward,
    cross_entropy,
    forward,
    layer_params,
    with_params,
)


def _loss(model: NetworkModel, x: np.ndarray, y: np.ndarray):
    scores, trace = forward(model, x)
    masks = [out > 0 for out in trace.outputs[:-1]]
    return cross_entropy(np.atleast_2d(scores), y), masks


def _perturbed(model: NetworkModel, k: int, i: int, idx, delta: float):
    params = [p.copy() for p in layer_params(model.layers[k])]
    params[i][idx] += delta
    layers = list(model.layers)
    layers[k] = with_params(layers[k], params)
    return model.replace_layers(layers)


def check_gradients(
    model: NetworkModel,
    x: np.ndarray,
    y: np.ndarray,
    h: float = 1e-5,
    rtol: float = 1e-5,
    atol: float = 1e-8,
    max_entries: int = 0,
    seed: int = 0,
) -> tuple[int, int]:
    """
    Compare analytic gradients with central differences on every parameter
    entry (or a random subset of `max_entries` per array). Entries whose
    perturbation flips a ReLU unit are skipped.

    Returns the number of checked and skipped entries.
    """
    rng = np.random.default_rng(seed)
    _, grads = backward(model, x, y)
    _, base_masks = _loss(model, x, y)
    checked = skipped = 0
    for k, layer in enumerate(model.layers):
        for i, p in enumerate(layer_params(layer)):
            entries = list(np.ndindex(p.shape))
            if max_entries and len(entries) > max_entries:
                pick = rng.choice(len(entries), size=max_entries, replace=False)
                entries = [entries[j] for j in pick]
            for idx in entries:
                up, up_masks = _loss(_perturbed(model, k, i, idx, h), x, y)
                down, down_masks = _loss(_perturbed(model, k, i, idx, -h), x, y)
                flipped = any(
                    np.any(a != b) or np.any(a != c)
                    for a, b, c in zip(base_masks, up_masks, down_masks)
                )
                if flipped:
                    skipped += 1
                    continue
                numeric = (up - down) / (2 * h)
                analytic = grads[k][i][idx]
                assert abs(numeric - analytic) <= rtol * (
                    abs(numeric) + abs(analytic)
                ) + atol, (k, i, idx, numeric, analytic)
                checked += 1
    return checked, skipped
