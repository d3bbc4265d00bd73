from collections.abc import Iterable, Mapping, Sequence
import csv
from pathlib import Path
from typing import Any, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from .cp import conv_kernel, fc_matrix_kernel, fc_vector_kernel
from .exception import CPCertifyException, SchemaError
from .harness import Dataset
from .model import (
    BoundReport,
    CompressionPlan,
    ConvCPLayer,
    ConvDenseLayer,
    DatasetFile,
    EpochMetrics,
    FCCPLayer,
    FCDenseLayer,
    ModelFile,
    PropertyTable,
    ReportFile,
    Sample,
    SkipLayer,
)
from .network import LayerSpec, NetworkModel

PathLike = Union[str, Path]
PlainEntry = Union[ConvDenseLayer, ConvCPLayer, FCDenseLayer, FCCPLayer]


def _array(data: Any, shape: Sequence[int], name: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=np.float64)
    except ValueError as e:
        raise SchemaError(f"{name}: ragged or non-numeric array") from e
    if arr.shape != tuple(shape):
        raise SchemaError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def _plain_to_entry(layer: LayerSpec) -> PlainEntry:
    w = layer.weights
    if layer.kind == "conv_dense":
        assert isinstance(w, np.ndarray)
        s, o, kx, ky = w.shape
        return ConvDenseLayer(
            kind="conv_dense",
            s=s,
            o=o,
            kx=kx,
            ky=ky,
            weights=np.transpose(w, (1, 0, 2, 3)).tolist(),
        )
    if layer.kind == "fc_dense":
        assert isinstance(w, np.ndarray)
        s1, s2, t1, t2 = w.shape
        return FCDenseLayer(
            kind="fc_dense", s1=s1, s2=s2, t1=t1, t2=t2, weights=w.tolist()
        )
    kernel = layer.kernel
    lambdas = kernel.lambdas.tolist()
    if layer.kind == "conv_cp":
        s, o, kx, ky = kernel.shape
        a, b, c = (f.tolist() for f in kernel.factors)
        return ConvCPLayer(
            kind="conv_cp",
            s=s,
            o=o,
            kx=kx,
            ky=ky,
            rank=kernel.rank,
            lambdas=lambdas,
            a=a,
            b=b,
            c=c,
        )
    s1, s2, t1, t2 = kernel.shape
    dims = {"s1": s1, "s2": s2, "t1": t1, "t2": t2, "rank": kernel.rank}
    if kernel.layout == "fc_vectors":
        a, b, c, d = (f.tolist() for f in kernel.factors)
        return FCCPLayer(
            kind="fc_cp", mode="vectors", lambdas=lambdas, a=a, b=b, c=c, d=d, **dims
        )
    k1, k2 = (f.tolist() for f in kernel.factors)
    return FCCPLayer(
        kind="fc_cp", mode="matrices", lambdas=lambdas, k1=k1, k2=k2, **dims
    )


def _plain_from_entry(entry: PlainEntry) -> LayerSpec:
    if isinstance(entry, ConvDenseLayer):
        w = _array(entry.weights, (entry.o, entry.s, entry.kx, entry.ky), "weights")
        return LayerSpec("conv_dense", np.transpose(w, (1, 0, 2, 3)).copy())
    if isinstance(entry, FCDenseLayer):
        shape = (entry.s1, entry.s2, entry.t1, entry.t2)
        return LayerSpec("fc_dense", _array(entry.weights, shape, "weights"))
    R = entry.rank
    lambdas = _array(entry.lambdas, (R,), "lambdas")
    if isinstance(entry, ConvCPLayer):
        kernel = conv_kernel(
            lambdas,
            _array(entry.a, (R, entry.s), "a"),
            _array(entry.b, (R, entry.o), "b"),
            _array(entry.c, (R, entry.kx, entry.ky), "c"),
        )
        return LayerSpec("conv_cp", kernel)
    if entry.mode == "vectors":
        blocks = {"a": entry.s1, "b": entry.s2, "c": entry.t1, "d": entry.t2}
        factors = []
        for name, size in blocks.items():
            value = getattr(entry, name)
            if value is None:
                raise SchemaError(f"vectors mode requires factor {name!r}")
            factors.append(_array(value, (R, size), name))
        return LayerSpec("fc_cp", fc_vector_kernel(lambdas, *factors))
    if entry.k1 is None or entry.k2 is None:
        raise SchemaError("matrices mode requires factors 'k1' and 'k2'")
    kernel = fc_matrix_kernel(
        lambdas,
        _array(entry.k1, (R, entry.s1, entry.t1), "k1"),
        _array(entry.k2, (R, entry.s2, entry.t2), "k2"),
    )
    return LayerSpec("fc_cp", kernel)


def model_to_file(model: NetworkModel) -> ModelFile:
    layers: list[Any] = []
    for layer in model.layers:
        if layer.is_skip:
            assert layer.inner is not None
            layers.append(SkipLayer(kind="skip", inner=_plain_to_entry(layer.inner)))
        else:
            layers.append(_plain_to_entry(layer))
    return ModelFile(input_shape=list(model.input_shape), layers=layers)


def model_from_file(data: ModelFile) -> NetworkModel:
    """
    Build a network from its file schema.

    - `data`: Parsed model file.
    """
    layers = []
    try:
        for entry in data.layers:
            if isinstance(entry, SkipLayer):
                layers.append(LayerSpec("skip", inner=_plain_from_entry(entry.inner)))
            else:
                layers.append(_plain_from_entry(entry))
        return NetworkModel(tuple(layers), tuple(data.input_shape))
    except SchemaError:
        raise
    except CPCertifyException as e:
        raise SchemaError(e.message) from e


def dataset_to_file(dataset: Dataset) -> DatasetFile:
    return DatasetFile(
        num_classes=dataset.num_classes,
        input_shape=list(dataset.input_shape),
        samples=[
            Sample(x=x.ravel().tolist(), y=int(y))
            for x, y in zip(dataset.inputs, dataset.labels)
        ],
    )


def dataset_from_file(data: DatasetFile) -> Dataset:
    shape = tuple(data.input_shape)
    size = int(np.prod(shape))
    for i, sample in enumerate(data.samples):
        if len(sample.x) != size:
            raise SchemaError(
                f"sample {i}: {len(sample.x)} values, input shape needs {size}"
            )
    if not data.samples:
        raise SchemaError("dataset has no samples")
    inputs = np.asarray([s.x for s in data.samples]).reshape(-1, *shape)
    try:
        return Dataset(inputs, [s.y for s in data.samples], data.num_classes)
    except ValueError as e:
        raise SchemaError(str(e)) from e


def _read(path: PathLike, schema: type[BaseModel]) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return schema.model_validate_json(text)
    except ValidationError as e:
        raise SchemaError(f"{path}: {e.error_count()} schema error(s): {e}") from e


def _write(path: PathLike, data: BaseModel) -> None:
    Path(path).write_text(data.model_dump_json(exclude_none=True), encoding="utf-8")


def read_model(path: PathLike) -> NetworkModel:
    return model_from_file(_read(path, ModelFile))


def write_model(path: PathLike, model: NetworkModel) -> None:
    _write(path, model_to_file(model))


def read_dataset(path: PathLike) -> Dataset:
    return dataset_from_file(_read(path, DatasetFile))


def write_dataset(path: PathLike, dataset: Dataset) -> None:
    _write(path, dataset_to_file(dataset))


def read_report(path: PathLike) -> ReportFile:
    return _read(path, ReportFile)


def write_report(path: PathLike, report: ReportFile) -> None:
    _write(path, report)


def property_rows(table: PropertyTable) -> list[dict[str, Any]]:
    return [
        {
            "variant": table.variant,
            "layer": p.index,
            "kind": p.kind,
            "skip": p.skip,
            "rank": p.rank,
            "frobenius_norm": p.frobenius_norm,
            "growth": p.growth,
            "lc": p.lc,
            "rf": p.rf,
            "tf_R": p.tf[-1] if p.tf else 0.0,
            "nb_1": p.nb[1] if len(p.nb) > 1 else 0.0,
            "excluded_samples": p.excluded_samples,
        }
        for p in table.layers
    ]


def plan_rows(plan: CompressionPlan) -> list[dict[str, Any]]:
    return [
        {"method": plan.method, "epsilon": plan.epsilon, **lp.model_dump()}
        for lp in plan.layers
    ]


def bound_rows(report: BoundReport) -> list[dict[str, Any]]:
    return [
        {"gamma": report.gamma, "margin_loss": report.margin_loss, **row.model_dump()}
        for row in report.layers
    ]


def metric_rows(metrics: Iterable[EpochMetrics]) -> list[dict[str, Any]]:
    return [m.model_dump() for m in metrics]


def write_csv(
    path: PathLike, rows: Sequence[Mapping[str, Any]], fields: Sequence[str] = ()
) -> None:
    """
    Write rows as CSV with a header line.

    - `path`: Output file.
    - `rows`: One mapping per row.
    - `fields`: Column order; defaults to the keys of the first row.
    """
    columns = list(fields) or (list(rows[0]) if rows else [])
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row.get(k) is None else row[k] for k in columns})
