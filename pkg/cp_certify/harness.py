"""
Synthetic datasets, label corruption and a mini-batch SGD trainer.
"""

from collections.abc import Sequence
from dataclasses import dataclass
import math
from typing import Optional

import numpy as np

from .config import TrainConfig
from .cp import renormalize
from .exception import ShapeMismatch, TrainingDiverged
from .log import log
from .model import EpochMetrics
from .network import (
    NetworkModel,
    backward,
    forward_dataset,
    layer_params,
    with_params,
)

NOISE_STD = 0.1


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    """
    Stacked inputs (m, *input_shape)
    """
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if inputs.ndim < 2 or len(inputs) != len(labels):
            raise ShapeMismatch(
                f"{len(inputs)} inputs do not match {len(labels)} labels"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return [(x, int(y)) for x, y in zip(self.inputs, self.labels)]

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.inputs, labels, self.num_classes)


def _pattern_axes(input_shape: Sequence[int]) -> tuple[int, ...]:
    if len(input_shape) != 1:
        return tuple(input_shape)
    d = input_shape[0]
    p = max(q for q in range(1, math.isqrt(d) + 1) if d % q == 0)
    return (p, d // p)


def _rank2_pattern(rng: np.random.Generator, axes: Sequence[int]) -> np.ndarray:
    pattern = np.zeros(tuple(axes))
    for _ in range(2):
        term = rng.standard_normal(axes[0])
        for size in axes[1:]:
            term = np.multiply.outer(term, rng.standard_normal(size))
        pattern += term
    return pattern / np.sqrt(np.mean(pattern**2))


def make_synthetic(
    num_classes: int,
    per_class: int,
    input_shape: Sequence[int],
    seed: int = 0,
    sample_seed: Optional[int] = None,
) -> Dataset:
    """
    Class-conditional data: a fixed rank-2 pattern per class (RMS 1) plus
    Gaussian noise of standard deviation 0.1.

    - `num_classes`: Number of classes.
    - `per_class`: Samples per class.
    - `input_shape`: (H, W, C) images or (d,) vectors; vector patterns are
      rank 2 as near-square matrices.
    - `seed`: Seed of the class patterns.
    - `sample_seed`: Seed of the noise, defaults to `seed`.
    """
    if num_classes < 1 or per_class < 1:
        raise ValueError("num_classes and per_class must be at least 1")
    input_shape = tuple(int(d) for d in input_shape)
    rng = np.random.default_rng(seed)
    axes = _pattern_axes(input_shape)
    patterns = np.stack(
        [_rank2_pattern(rng, axes).reshape(input_shape) for _ in range(num_classes)]
    )
    noise_rng = np.random.default_rng([seed if sample_seed is None else sample_seed, 1])
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = noise_rng.normal(0.0, NOISE_STD, size=(len(labels), *input_shape))
    return Dataset(patterns[labels] + noise, labels, num_classes)


def corrupt_labels(dataset: Dataset, rate: float, seed: int = 0) -> Dataset:
    """
    Give ⌊rate·m⌋ randomly chosen samples a label drawn uniformly from the
    other classes.

    - `dataset`: Clean dataset.
    - `rate`: Fraction in [0, 1].
    - `seed`: Random seed.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    m = len(dataset)
    count = math.floor(rate * m)
    if count == 0:
        return dataset
    if dataset.num_classes < 2:
        raise ValueError("label corruption needs at least two classes")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(m, size=count, replace=False)
    labels = dataset.labels.copy()
    shift = rng.integers(1, dataset.num_classes, size=count)
    labels[chosen] = (labels[chosen] + shift) % dataset.num_classes
    return dataset.with_labels(labels)


def accuracy(model: NetworkModel, dataset: Dataset) -> float:
    scores, _ = forward_dataset(model, dataset.inputs)
    return float(np.mean(np.argmax(scores, axis=1) == dataset.labels))


def _renormalize_layer(
    params: list[np.ndarray], velocity: list[np.ndarray], kernel_of
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    result = renormalize(kernel_of(params))
    kernel = result.kernel
    index = result.index
    moved = [v[index] for v in velocity]
    moved[0] = moved[0] * result.sign
    shape = (len(index),) + (1,) * (moved[1].ndim - 1)
    moved[1] = moved[1] * result.sign.reshape(shape)
    return [kernel.lambdas, *kernel.factors], moved


def train(
    model: NetworkModel,
    dataset: Dataset,
    config: Optional[TrainConfig] = None,
    clean: Optional[Dataset] = None,
) -> tuple[NetworkModel, list[EpochMetrics]]:
    """
    Mini-batch SGD with momentum and weight decay on softmax cross-entropy.

    CP layers are renormalized after every step; momentum buffers follow the
    components through the reordering.

    - `model`: Initial network.
    - `dataset`: Training set.
    - `config`: Optimizer settings.
    - `clean`: Held-out set whose accuracy is reported per epoch.
    """
    config = config or TrainConfig()
    if dataset.input_shape != model.input_shape:
        raise ShapeMismatch(
            f"dataset inputs {dataset.input_shape} do not match {model.input_shape}"
        )
    rng = np.random.default_rng(config.seed)
    params = [[p.copy() for p in layer_params(layer)] for layer in model.layers]
    velocity = [[np.zeros_like(p) for p in group] for group in params]
    metrics: list[EpochMetrics] = []
    m = len(dataset)

    def build() -> NetworkModel:
        return model.replace_layers(
            [with_params(layer, group) for layer, group in zip(model.layers, params)]
        )

    current = model
    for epoch in range(1, config.epochs + 1):
        lr = config.lr * 0.5 ** ((epoch - 1) // config.lr_halving_period)
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, config.batch_size):
            batch = order[start : start + config.batch_size]
            x, y = dataset.inputs[batch], dataset.labels[batch]
            loss, grads = backward(current, x, y)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            total += loss * len(batch)
            if lr == 0.0:
                continue
            for k, layer in enumerate(model.layers):
                for p, g, v in zip(params[k], grads[k], velocity[k]):
                    v *= config.momentum
                    v += g + config.weight_decay * p
                    p -= lr * v
                if not all(np.all(np.isfinite(p)) for p in params[k]):
                    raise TrainingDiverged(epoch)
                if layer.is_cp:
                    base = layer.kernel
                    params[k], velocity[k] = _renormalize_layer(
                        params[k],
                        velocity[k],
                        lambda ps, base=base: base.replace(ps[0], ps[1:]),
                    )
            current = build()
        record = EpochMetrics(
            epoch=epoch,
            lr=lr,
            loss=total / m,
            train_acc=accuracy(current, dataset),
            clean_acc=None if clean is None else accuracy(current, clean),
        )
        metrics.append(record)
        log(
            "INFO",
            f"epoch {epoch}: loss <y>{record.loss:.4f}</y> "
            f"train acc {record.train_acc:.3f}",
        )
    return current, metrics
