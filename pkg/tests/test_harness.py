import numpy as np
import pytest

from cp_certify.config import TrainConfig
from cp_certify.exception import ShapeMismatch, TrainingDiverged
from cp_certify.harness import Dataset, accuracy, corrupt_labels, make_synthetic, train
from cp_certify.network import cross_entropy, forward, preset


def test_synthetic_shapes_and_labels():
    data = make_synthetic(3, 5, (8, 8, 1), seed=1)
    assert data.inputs.shape == (15, 8, 8, 1)
    assert data.labels.tolist() == [0] * 5 + [1] * 5 + [2] * 5
    assert data.num_classes == 3
    vectors = make_synthetic(4, 2, (16,), seed=1)
    assert vectors.input_shape == (16,)


def test_two_samples_two_classes():
    data = make_synthetic(2, 1, (4, 4, 1))
    assert len(data) == 2
    assert sorted(data.labels.tolist()) == [0, 1]


def test_synthetic_is_deterministic():
    a = make_synthetic(4, 8, (8, 8, 1), seed=5)
    b = make_synthetic(4, 8, (8, 8, 1), seed=5)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    c = make_synthetic(4, 8, (8, 8, 1), seed=6)
    assert not np.array_equal(a.inputs, c.inputs)


def test_sample_seed_redraws_noise_only():
    a = make_synthetic(2, 200, (4, 4, 2), seed=0)
    b = make_synthetic(2, 200, (4, 4, 2), seed=0, sample_seed=9)
    assert not np.array_equal(a.inputs, b.inputs)
    for k in range(2):
        mean_a = a.inputs[a.labels == k].mean(axis=0)
        mean_b = b.inputs[b.labels == k].mean(axis=0)
        assert np.max(np.abs(mean_a - mean_b)) < 0.06


def test_synthetic_rejects_empty():
    with pytest.raises(ValueError):
        make_synthetic(0, 4, (4, 4, 1))
    with pytest.raises(ValueError):
        make_synthetic(2, 0, (4, 4, 1))


def test_dataset_validates_labels():
    with pytest.raises(ShapeMismatch):
        Dataset(np.zeros((3, 4)), [0, 1], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 4)), [0, 2], 2)


def test_corrupt_labels():
    data = make_synthetic(4, 25, (4, 4, 1))
    assert corrupt_labels(data, 0.0) is data
    flipped = corrupt_labels(data, 1.0, seed=3)
    assert np.all(flipped.labels != data.labels)
    half = corrupt_labels(data, 0.5, seed=3)
    assert np.count_nonzero(half.labels != data.labels) == 50
    assert half.labels.min() >= 0
    assert half.labels.max() < 4
    np.testing.assert_array_equal(half.inputs, data.inputs)
    with pytest.raises(ValueError):
        corrupt_labels(data, 1.5)


def test_zero_learning_rate_keeps_weights(fc, vector_data):
    model, metrics = train(fc, vector_data, TrainConfig(epochs=2, lr=0.0))
    assert len(metrics) == 2
    for before, after in zip(fc.layers, model.layers):
        np.testing.assert_array_equal(before.dense_kernel(), after.dense_kernel())


def test_training_is_deterministic(fc, vector_data):
    config = TrainConfig(epochs=2, batch_size=8, seed=4)
    a, metrics_a = train(fc, vector_data, config)
    b, metrics_b = train(fc, vector_data, config)
    assert [m.loss for m in metrics_a] == [m.loss for m in metrics_b]
    for x, y in zip(a.layers, b.layers):
        np.testing.assert_array_equal(x.kernel.lambdas, y.kernel.lambdas)


def test_training_keeps_cp_layers_normalized(cnn, image_data):
    model, _ = train(cnn, image_data, TrainConfig(epochs=2, batch_size=8))
    for before, after in zip(cnn.layers, model.layers):
        assert after.kernel.is_normalized(atol=1e-10)
        assert after.kernel.rank == before.kernel.rank


def test_learning_rate_halves(fc, vector_data):
    config = TrainConfig(epochs=3, lr=0.04, lr_halving_period=1)
    _, metrics = train(fc, vector_data, config, clean=vector_data)
    assert [m.lr for m in metrics] == [0.04, 0.02, 0.01]
    assert all(m.clean_acc is not None for m in metrics)
    assert [m.epoch for m in metrics] == [1, 2, 3]


def test_training_reduces_loss(fc, vector_data):
    before, _ = forward(fc, vector_data.inputs)
    model, _ = train(fc, vector_data, TrainConfig(epochs=20, lr=0.01, batch_size=8))
    after, _ = forward(model, vector_data.inputs)
    labels = vector_data.labels
    assert cross_entropy(after, labels) < cross_entropy(before, labels)


def test_overflowing_inputs_diverge(fc):
    rng = np.random.default_rng(0)
    data = Dataset(1e300 * rng.uniform(0.5, 1.0, size=(16, 16)), np.arange(16) % 4, 4)
    with pytest.raises(TrainingDiverged), np.errstate(all="ignore"):
        train(fc, data, TrainConfig(epochs=3, batch_size=4, lr=1.0))


def test_training_rejects_wrong_inputs(cnn, vector_data):
    with pytest.raises(ShapeMismatch):
        train(cnn, vector_data, TrainConfig(epochs=1))


@pytest.mark.slow
def test_single_sample_is_memorized():
    model = preset("toy-fc", num_classes=4, seed=2)
    data = make_synthetic(4, 1, (16,), seed=2)
    single = Dataset(data.inputs[:1], data.labels[:1], 4)
    config = TrainConfig(
        epochs=1000, batch_size=1, weight_decay=0.0, lr_halving_period=1000
    )
    model, metrics = train(model, single, config)
    assert metrics[-1].loss < 1e-3
    assert accuracy(model, single) == 1.0
