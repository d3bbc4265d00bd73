"""
Feed-forward ReLU networks of circular convolutions or reshaped
fully-connected layers, stored densely or in CP form.

Every operation is batched over a leading sample axis. Conv activations are
(B, H, W, C); FC activations are matrices (B, s1, s2) and FC model inputs are
flat vectors reshaped row-major.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
from typing import TYPE_CHECKING, Callable, Literal, Optional, Union

import numpy as np
from scipy.special import log_softmax, softmax

from .config import ALSConfig, Config
from .cp import (
    CPKernel,
    cp_als,
    polyadic_rank,
    random_kernel,
    reconstruct,
    spatial_first,
)
from .exception import (
    ConvergenceError,
    NonFiniteError,
    RankCapExceeded,
    ShapeMismatch,
)
from .fourier import (
    conv2d_circular,
    conv2d_circular_adjoint,
    depthwise_circular,
    depthwise_circular_adjoint,
)
from .log import log

if TYPE_CHECKING:
    from .harness import Dataset

LayerKind = Literal["conv_dense", "conv_cp", "fc_dense", "fc_cp", "skip"]
Weights = Union[np.ndarray, CPKernel]
PRESETS = ("toy-cnn", "toy-fc", "toy-skip")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: LayerKind
    weights: Optional[Weights] = None
    """
    Dense kernel (conv: (s, o, kx, ky), FC: (s1, s2, t1, t2)) or CP kernel
    """
    inner: Optional["LayerSpec"] = None
    """
    Wrapped layer of a skip connection
    """

    def __post_init__(self):
        if self.kind == "skip":
            if self.inner is None or self.inner.kind == "skip":
                raise ShapeMismatch("a skip layer wraps exactly one plain layer")
            if self.weights is not None:
                raise ShapeMismatch("a skip layer carries no weights of its own")
            if self.inner.in_shape != self.inner.out_shape:
                raise ShapeMismatch(
                    f"skip connection needs matching input and output channels, "
                    f"got {self.inner.in_shape} and {self.inner.out_shape}"
                )
            return
        if self.inner is not None:
            raise ShapeMismatch(f"a {self.kind} layer cannot wrap another layer")
        w = self.weights
        if self.kind in ("conv_dense", "fc_dense"):
            if not isinstance(w, np.ndarray) or w.ndim != 4:
                raise ShapeMismatch(f"{self.kind} expects a 4-order dense kernel")
            if not np.all(np.isfinite(w)):
                raise NonFiniteError("layer weights have non-finite entries")
            object.__setattr__(self, "weights", np.asarray(w, dtype=np.float64))
        elif self.kind == "conv_cp":
            if not isinstance(w, CPKernel) or w.layout != "conv":
                raise ShapeMismatch("conv_cp expects a conv CP kernel")
        elif self.kind == "fc_cp":
            if not isinstance(w, CPKernel) or w.layout not in (
                "fc_vectors",
                "fc_matrices",
            ):
                raise ShapeMismatch("fc_cp expects an FC CP kernel")
        else:
            raise ShapeMismatch(f"unknown layer kind {self.kind!r}")

    @property
    def base(self) -> "LayerSpec":
        return self.inner if self.inner is not None else self

    @property
    def is_conv(self) -> bool:
        return self.base.kind.startswith("conv")

    @property
    def is_cp(self) -> bool:
        return self.base.kind.endswith("_cp")

    @property
    def is_skip(self) -> bool:
        return self.kind == "skip"

    @property
    def kernel_shape(self) -> tuple[int, ...]:
        w = self.base.weights
        assert w is not None
        return tuple(w.shape)

    @property
    def in_shape(self) -> tuple[int, ...]:
        """
        Channel count (conv) or input matrix shape (FC)
        """
        shape = self.kernel_shape
        return (shape[0],) if self.is_conv else shape[:2]

    @property
    def out_shape(self) -> tuple[int, ...]:
        shape = self.kernel_shape
        return (shape[1],) if self.is_conv else shape[2:]

    @property
    def kernel(self) -> CPKernel:
        w = self.base.weights
        if not isinstance(w, CPKernel):
            raise TypeError("layer is dense")
        return w

    def dense_kernel(self) -> np.ndarray:
        w = self.base.weights
        if isinstance(w, CPKernel):
            return reconstruct(w)
        assert w is not None
        return w

    def with_weights(self, weights: Weights) -> "LayerSpec":
        if self.inner is not None:
            return LayerSpec("skip", inner=self.inner.with_weights(weights))
        if isinstance(weights, CPKernel):
            kind = "conv_cp" if self.is_conv else "fc_cp"
        else:
            kind = "conv_dense" if self.is_conv else "fc_dense"
        return LayerSpec(kind, weights)


@dataclass(frozen=True, eq=False)
class NetworkModel:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    """
    (H, W, s) for conv networks, (d,) for FC networks
    """

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(
            self, "input_shape", tuple(int(d) for d in self.input_shape)
        )
        if not self.layers:
            raise ShapeMismatch("a network needs at least one layer")
        conv = self.layers[0].is_conv
        if any(layer.is_conv != conv for layer in self.layers):
            raise ShapeMismatch("conv and FC layers cannot be mixed")
        if conv:
            if len(self.input_shape) != 3:
                raise ShapeMismatch(f"conv input must be HxWxC, got {self.input_shape}")
            H, W, channels = self.input_shape
            current: tuple[int, ...] = (channels,)
        else:
            if len(self.input_shape) != 1:
                raise ShapeMismatch(
                    f"FC input must be a vector, got {self.input_shape}"
                )
            first = self.layers[0].in_shape
            if math.prod(first) != self.input_shape[0]:
                raise ShapeMismatch(
                    f"input length {self.input_shape[0]} does not reshape to {first}",
                    layer=0,
                )
            current = first
        for k, layer in enumerate(self.layers):
            if layer.in_shape != current:
                raise ShapeMismatch(
                    f"expects input {layer.in_shape}, previous layer gives {current}",
                    layer=k,
                )
            if conv:
                kx, ky = layer.kernel_shape[2:]
                if kx > H or ky > W:
                    raise ShapeMismatch(
                        f"kernel {kx}x{ky} does not fit a {H}x{W} grid", layer=k
                    )
            current = layer.out_shape

    @property
    def is_conv(self) -> bool:
        return self.layers[0].is_conv

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def grid(self) -> tuple[int, int]:
        """
        Spatial size (H, W) shared by every conv layer; (1, 1) for FC networks
        """
        if self.is_conv:
            return self.input_shape[0], self.input_shape[1]
        return 1, 1

    @property
    def num_classes(self) -> int:
        return math.prod(self.layers[-1].out_shape)

    @property
    def has_skip(self) -> bool:
        return any(layer.is_skip for layer in self.layers)

    def replace_layers(self, layers: Sequence[LayerSpec]) -> "NetworkModel":
        return NetworkModel(tuple(layers), self.input_shape)


@dataclass
class ActivationTrace:
    inputs: list[np.ndarray] = field(default_factory=list)
    """
    X^(k): input of every layer, batched
    """
    outputs: list[np.ndarray] = field(default_factory=list)
    """
    Y^(k): pre-activation output of every layer, batched
    """

    @staticmethod
    def _norms(tensors: list[np.ndarray]) -> np.ndarray:
        return np.stack(
            [np.linalg.norm(t.reshape(t.shape[0], -1), axis=1) for t in tensors]
        )

    def input_norms(self) -> np.ndarray:
        """
        Per-layer, per-sample ‖X^(k)‖_F, shaped (depth, B)
        """
        return self._norms(self.inputs)

    def output_norms(self) -> np.ndarray:
        return self._norms(self.outputs)


def relu(y: np.ndarray) -> np.ndarray:
    return np.maximum(y, 0.0)


def _conv_cp_parts(kernel: CPKernel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, _, c = kernel.factors
    z = x @ a.T
    return z, depthwise_circular(z, c)


def _fc_cp_apply(kernel: CPKernel, x: np.ndarray) -> np.ndarray:
    lam = kernel.lambdas
    if kernel.layout == "fc_vectors":
        a, b, c, d = kernel.factors
        alpha = np.einsum("ra,nab,rb->nr", a, x, b, optimize=True)
        return np.einsum("nr,r,rc,rd->ncd", alpha, lam, c, d, optimize=True)
    k1, k2 = kernel.factors
    return np.einsum("rac,nab,rbd,r->ncd", k1, x, k2, lam, optimize=True)


def apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """
    Evaluate one layer on a batch, without activation.

    - `layer`: The layer.
    - `x`: Batched input.
    """
    if layer.kind == "skip":
        assert layer.inner is not None
        return apply_layer(layer.inner, x) + x
    w = layer.weights
    if layer.kind == "conv_dense":
        assert isinstance(w, np.ndarray)
        return conv2d_circular(x, spatial_first(w))
    if layer.kind == "conv_cp":
        assert isinstance(w, CPKernel)
        if w.rank == 0:
            return np.zeros((*x.shape[:-1], w.shape[1]))
        _, zc = _conv_cp_parts(w, x)
        return (zc * w.lambdas) @ w.factors[1]
    if layer.kind == "fc_dense":
        return np.einsum("abcd,nab->ncd", w, x, optimize=True)
    assert isinstance(w, CPKernel)
    if w.rank == 0:
        return np.zeros((x.shape[0], *w.shape[2:]))
    return _fc_cp_apply(w, x)


def _batch(model: NetworkModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = tuple(x.shape) == model.input_shape
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeMismatch(
            f"input of shape {x.shape} does not match {model.input_shape}", layer=0
        )
    if not model.is_conv:
        x = x.reshape(x.shape[0], *model.layers[0].in_shape)
    return x, single


def scores_of(model: NetworkModel, y: np.ndarray) -> np.ndarray:
    """
    Class scores from the last layer's output: spatial sum (conv) or
    flattening (FC).

    - `model`: The network.
    - `y`: Batched output of the last layer.
    """
    if model.is_conv:
        return y.sum(axis=(1, 2))
    return y.reshape(y.shape[0], -1)


def forward(model: NetworkModel, x: np.ndarray) -> tuple[np.ndarray, ActivationTrace]:
    """
    Run the network and record every layer's input and output.

    - `model`: The network.
    - `x`: One input of `model.input_shape` or a batch of them.
    """
    batch, single = _batch(model, x)
    trace = ActivationTrace()
    current = batch
    for k, layer in enumerate(model.layers):
        trace.inputs.append(current)
        y = apply_layer(layer, current)
        trace.outputs.append(y)
        if k < model.depth - 1:
            current = relu(y)
    scores = scores_of(model, trace.outputs[-1])
    return (scores[0] if single else scores), trace


def _map_chunks(
    fn: Callable[[np.ndarray], tuple[np.ndarray, ActivationTrace]],
    inputs: np.ndarray,
    threads: int,
    chunk: int,
) -> list[tuple[np.ndarray, ActivationTrace]]:
    pieces = [inputs[i : i + chunk] for i in range(0, len(inputs), chunk)]
    if threads <= 1 or len(pieces) <= 1:
        return [fn(p) for p in pieces]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, pieces))


def forward_dataset(
    model: NetworkModel,
    inputs: np.ndarray,
    threads: Optional[int] = None,
    chunk: int = 256,
) -> tuple[np.ndarray, ActivationTrace]:
    """
    Batched forward over a whole dataset, split into chunks that may be
    evaluated on a worker pool. Results do not depend on the pool size.

    - `model`: The network.
    - `inputs`: Stacked inputs (m, *input_shape).
    - `threads`: Worker count; defaults to `CP_CERTIFY_THREADS`.
    - `chunk`: Samples per chunk.
    """
    if threads is None:
        threads = Config.from_env().threads
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    parts = _map_chunks(lambda p: forward(model, p), inputs, threads, chunk)
    scores = np.concatenate([s for s, _ in parts])
    trace = ActivationTrace(
        [np.concatenate([t.inputs[k] for _, t in parts]) for k in range(model.depth)],
        [np.concatenate([t.outputs[k] for _, t in parts]) for k in range(model.depth)],
    )
    return scores, trace


def predict(model: NetworkModel, inputs: np.ndarray) -> np.ndarray:
    scores, _ = forward_dataset(model, inputs)
    return np.argmax(scores, axis=1)


def margins_from_scores(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """
    Per-sample margin s_y − max_{i≠y} s_i.

    - `scores`: Scores (m, K).
    - `labels`: True classes (m,).
    """
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.arange(len(labels))
    true = scores[idx, labels]
    others = scores.astype(np.float64, copy=True)
    others[idx, labels] = -np.inf
    return true - others.max(axis=1)


def margins(model: NetworkModel, dataset: "Dataset") -> np.ndarray:
    scores, _ = forward_dataset(model, dataset.inputs)
    return margins_from_scores(scores, dataset.labels)


def margin_loss(model: NetworkModel, dataset: "Dataset", gamma: float) -> float:
    """
    Fraction of samples whose true-class score does not beat every other
    score by more than `gamma`.

    - `model`: The network.
    - `dataset`: Samples and labels.
    - `gamma`: Margin, non-negative.
    """
    if gamma < 0:
        raise ValueError("margin must be non-negative")
    return float(np.mean(margins(model, dataset) <= gamma))


def cross_entropy(scores: np.ndarray, labels: np.ndarray) -> float:
    logp = log_softmax(scores, axis=1)
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def layer_params(layer: LayerSpec) -> list[np.ndarray]:
    """
    Trainable arrays of a layer: the dense kernel, or λ followed by every
    CP factor.

    - `layer`: The layer.
    """
    w = layer.base.weights
    if isinstance(w, CPKernel):
        return [w.lambdas, *w.factors]
    assert w is not None
    return [w]


def with_params(layer: LayerSpec, params: Sequence[np.ndarray]) -> LayerSpec:
    w = layer.base.weights
    if isinstance(w, CPKernel):
        return layer.with_weights(w.replace(params[0], params[1:]))
    return layer.with_weights(np.asarray(params[0]))


def _layer_backward(
    layer: LayerSpec, x: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    if layer.kind == "skip":
        assert layer.inner is not None
        dx, grads = _layer_backward(layer.inner, x, dy)
        return dx + dy, grads
    w = layer.weights
    if layer.kind == "conv_dense":
        assert isinstance(w, np.ndarray)
        _, _, kx, ky = w.shape
        dw = np.empty_like(w)
        for u in range(kx):
            for v in range(ky):
                shifted = np.roll(x, shift=(u, v), axis=(1, 2))
                dw[:, :, u, v] = np.einsum("nijs,nijt->st", shifted, dy)
        return conv2d_circular_adjoint(dy, spatial_first(w)), [dw]
    if layer.kind == "fc_dense":
        dw = np.einsum("nab,ncd->abcd", x, dy, optimize=True)
        dx = np.einsum("abcd,ncd->nab", w, dy, optimize=True)
        return dx, [dw]
    assert isinstance(w, CPKernel)
    lam = w.lambdas
    if w.rank == 0:
        return np.zeros_like(x), [np.zeros(0), *(np.zeros_like(f) for f in w.factors)]
    if layer.kind == "conv_cp":
        a, b, c = w.factors
        z, zc = _conv_cp_parts(w, x)
        g = dy @ b.T
        d_lam = np.einsum("nijr,nijr->r", zc, g)
        d_b = np.einsum("nijr,nijo->ro", zc * lam, dy)
        d_zc = g * lam
        d_c = np.empty_like(c)
        for u in range(c.shape[1]):
            for v in range(c.shape[2]):
                shifted = np.roll(z, shift=(u, v), axis=(1, 2))
                d_c[:, u, v] = np.einsum("nijr,nijr->r", d_zc, shifted)
        d_z = depthwise_circular_adjoint(d_zc, c)
        d_a = np.einsum("nijr,nijs->rs", d_z, x)
        return d_z @ a, [d_lam, d_a, d_b, d_c]
    if w.layout == "fc_vectors":
        a, b, c, d = w.factors
        alpha = np.einsum("ra,nab,rb->nr", a, x, b, optimize=True)
        beta = np.einsum("rc,ncd,rd->nr", c, dy, d, optimize=True)
        d_lam = np.einsum("nr,nr->r", alpha, beta)
        scaled = alpha * lam
        d_c = np.einsum("nr,ncd,rd->rc", scaled, dy, d, optimize=True)
        d_d = np.einsum("nr,ncd,rc->rd", scaled, dy, c, optimize=True)
        d_alpha = beta * lam
        d_a = np.einsum("nr,nab,rb->ra", d_alpha, x, b, optimize=True)
        d_b = np.einsum("nr,nab,ra->rb", d_alpha, x, a, optimize=True)
        dx = np.einsum("nr,ra,rb->nab", d_alpha, a, b, optimize=True)
        return dx, [d_lam, d_a, d_b, d_c, d_d]
    k1, k2 = w.factors
    d_lam = np.einsum("rac,nab,rbd,ncd->r", k1, x, k2, dy, optimize=True)
    d_k1 = lam[:, None, None] * np.einsum("nab,rbd,ncd->rac", x, k2, dy, optimize=True)
    d_k2 = lam[:, None, None] * np.einsum("nab,rac,ncd->rbd", x, k1, dy, optimize=True)
    dx = np.einsum("r,rac,ncd,rbd->nab", lam, k1, dy, k2, optimize=True)
    return dx, [d_lam, d_k1, d_k2]


def backward(
    model: NetworkModel, x: np.ndarray, labels: np.ndarray
) -> tuple[float, list[list[np.ndarray]]]:
    """
    Mean softmax cross-entropy over a batch and its gradient with respect to
    every layer's `layer_params`.

    - `model`: The network.
    - `x`: Batched inputs.
    - `labels`: True classes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores, trace = forward(model, x)
    scores = np.atleast_2d(scores)
    n = scores.shape[0]
    loss = cross_entropy(scores, labels)
    d_scores = softmax(scores, axis=1)
    d_scores[np.arange(n), labels] -= 1.0
    d_scores /= n
    last = trace.outputs[-1]
    if model.is_conv:
        dy = np.broadcast_to(d_scores[:, None, None, :], last.shape).copy()
    else:
        dy = d_scores.reshape(last.shape)
    grads: list[list[np.ndarray]] = [[] for _ in model.layers]
    for k in range(model.depth - 1, -1, -1):
        dx, grads[k] = _layer_backward(model.layers[k], trace.inputs[k], dy)
        if k > 0:
            dy = dx * (trace.outputs[k - 1] > 0)
    return loss, grads


def densify(model: NetworkModel) -> NetworkModel:
    return model.replace_layers(
        [
            layer.with_weights(layer.dense_kernel()) if layer.is_cp else layer
            for layer in model.layers
        ]
    )


def layer_rank_cap(layer: LayerSpec, fc_mode: str = "vectors") -> int:
    layout = "conv" if layer.is_conv else f"fc_{fc_mode}"
    return polyadic_rank(layer.kernel_shape, layout)  # type: ignore[arg-type]


def cp_ify(
    model: NetworkModel,
    ranks: Optional[Sequence[Optional[int]]] = None,
    als: Optional[ALSConfig] = None,
    fc_mode: Literal["vectors", "matrices"] = "vectors",
    strict: bool = False,
) -> tuple[NetworkModel, list[float]]:
    """
    Decompose every dense layer with CP-ALS. CP layers pass through.

    - `model`: The network.
    - `ranks`: Rank per layer; `None` entries (or no list) select the
      polyadic rank cap of the layer.
    - `als`: ALS settings, including the reconstruction error budget.
    - `fc_mode`: Factor form of decomposed FC layers.
    - `strict`: Raise `ConvergenceError` instead of warning when a layer
      misses the error budget.

    Returns the new model and the relative reconstruction error per layer
    (0 for layers that were already CP).
    """
    als = als or ALSConfig()
    if ranks is not None and len(ranks) != model.depth:
        raise ShapeMismatch(f"{len(ranks)} ranks given for {model.depth} layers")
    layers, errors = [], []
    for k, layer in enumerate(model.layers):
        if layer.is_cp:
            layers.append(layer)
            errors.append(0.0)
            continue
        cap = layer_rank_cap(layer, fc_mode)
        requested = None if ranks is None else ranks[k]
        rank = cap if requested is None else int(requested)
        if rank > cap:
            raise RankCapExceeded(rank, cap, layer=k)
        layout = "conv" if layer.is_conv else f"fc_{fc_mode}"
        result = cp_als(
            layer.dense_kernel(),
            rank,
            tol=als.tol,
            max_iter=als.max_iter,
            seed=als.seed,
            n_init=als.n_init,
            layout=layout,  # type: ignore[arg-type]
        )
        if result.error > als.budget:
            if strict:
                raise ConvergenceError(
                    f"layer {k}: ALS error {result.error:.3e} above the "
                    f"tolerance {als.budget:.1e} at rank {rank}",
                    last=result.error,
                )
            log(
                "WARNING",
                f"layer {k}: ALS error <y>{result.error:.3e}</y> above the "
                f"budget {als.budget:.1e} at rank {rank}",
            )
        else:
            log("DEBUG", f"layer {k}: rank {rank}, ALS error {result.error:.3e}")
        layers.append(layer.with_weights(result.kernel))
        errors.append(result.error)
    return model.replace_layers(layers), errors


def _cp_layer(
    shape: tuple[int, ...], rank: int, layout: str, scale: float, seed: int
) -> LayerSpec:
    kernel = random_kernel(shape, rank, layout, seed, scale)  # type: ignore[arg-type]
    return LayerSpec("conv_cp" if layout == "conv" else "fc_cp", kernel)


def preset(name: str, num_classes: int = 4, seed: int = 0) -> NetworkModel:
    """
    Named architectures with seeded CP initialization.

    - `name`: "toy-cnn", "toy-fc" or "toy-skip".
    - `num_classes`: Number of output classes.
    - `seed`: Initialization seed.
    """
    if num_classes < 2:
        raise ValueError("at least two classes are required")
    K = num_classes
    if name == "toy-cnn":
        shapes = [(1, 8, 3, 3), (8, 16, 3, 3), (16, K, 3, 3)]
        layers = []
        for k, shape in enumerate(shapes):
            rank = polyadic_rank(shape, "conv")
            scale = math.sqrt(2.0 * shape[1] / rank)
            if k == len(shapes) - 1:
                scale /= 8.0
            layers.append(_cp_layer(shape, rank, "conv", scale, seed + k))
        return NetworkModel(tuple(layers), (8, 8, 1))
    if name == "toy-fc":
        shapes = [(4, 4, 4, 4), (4, 4, 4, 4), (4, 4, K, 1)]
        layers = []
        for k, shape in enumerate(shapes):
            rank = min(16, polyadic_rank(shape, "fc_vectors"))
            scale = math.sqrt(2.0 * shape[2] * shape[3] / rank)
            layers.append(_cp_layer(shape, rank, "fc_vectors", scale, seed + k))
        return NetworkModel(tuple(layers), (16,))
    if name == "toy-skip":
        shape = (K, K, 3, 3)
        rank = polyadic_rank(shape, "conv")
        scale = 0.5 * math.sqrt(K / rank)
        layers = [
            LayerSpec("skip", inner=_cp_layer(shape, rank, "conv", scale, seed + k))
            for k in range(3)
        ]
        return NetworkModel(tuple(layers), (8, 8, K))
    raise ValueError(f"unknown preset {name!r}, expected one of {PRESETS}")
