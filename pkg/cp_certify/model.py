from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

Variant = Literal["per_frequency", "per_component"]
Method = Literal["fbrc", "fbr_fc", "fbrc_skip", "threshold"]


class Record(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False, extra="forbid")


class LayerProperties(Record):
    index: int
    kind: str
    skip: bool = False
    rank: int
    """
    Number of CP components R
    """
    grid: tuple[int, int] = (1, 1)
    """
    Spatial size (H, W) the layer acts on
    """
    tf: list[float]
    """
    Tensorization factors tf_1..tf_R
    """
    nb: list[float]
    """
    Tensor noise bounds nb_0..nb_R
    """
    frobenius_norm: float
    """
    ‖M‖_F of the layer kernel (inner kernel for skip layers)
    """
    growth: Optional[float] = None
    """
    min over samples of ‖X^(k+1)‖_F / ‖X^(k)‖_F
    """
    lc: Optional[float] = None
    """
    Layer cushion
    """
    rf: Optional[float] = None
    """
    Reshaping factor (FC layers only)
    """
    excluded_samples: int = 0
    """
    Samples with an identically zero layer input
    """


class PropertyTable(Record):
    variant: Variant
    samples: int
    max_output_norm: float
    """
    max over the dataset of ‖M(X)‖_F
    """
    layers: list[LayerProperties]


class LayerPlan(Record):
    index: int
    rank: int
    chosen_rank: int
    lhs: Optional[float] = None
    """
    Left-hand side of the rank condition at the chosen rank
    """
    rhs: Optional[float] = None
    """
    Right-hand side of the rank condition
    """
    operator_bound: Optional[float] = None
    """
    Operator-norm bound of the compressed layer used for shallower layers
    """


class CompressionPlan(Record):
    method: Method
    variant: Optional[Variant] = None
    epsilon: Optional[float] = None
    """
    Perturbation parameter, clamped to (0, 1]
    """
    epsilon_raw: Optional[float] = None
    """
    γ / (2 max‖M(X)‖_F) before clamping
    """
    gamma: Optional[float] = None
    threshold: Optional[float] = None
    layers: list[LayerPlan]

    @property
    def ranks(self) -> list[int]:
        return [layer.chosen_rank for layer in self.layers]


class ChainCheck(Record):
    depth: int
    measured: float
    """
    max over samples of ‖X^(m) − X̂^(m)‖_F / ‖X^(m)‖_F
    """
    coefficient: Optional[float] = None
    """
    Layer-wise error bound at this depth, unset when a growth is zero
    """
    holds: bool


class VerificationReport(Record):
    epsilon: Optional[float] = None
    samples: int
    max_residual: float
    worst_sample: int
    chain: list[ChainCheck] = []


class LayerBound(Record):
    index: int
    original_params: int
    effective_params: int
    ratio: float


class BoundReport(Record):
    gamma: float
    samples: int
    margin_loss: float
    d_orig: int
    d_eff: int
    complexity: float
    """
    √(d_eff / m) with constants set to 1 and log factors omitted
    """
    complexity_label: str = "unscaled complexity"
    bound: float
    layers: list[LayerBound]


class EpochMetrics(Record):
    epoch: int
    lr: float
    loss: float
    train_acc: float
    clean_acc: Optional[float] = None


class ConvDenseLayer(Record):
    kind: Literal["conv_dense"]
    s: int
    o: int
    kx: int
    ky: int
    weights: list[list[list[list[float]]]]
    """
    Indexed [o][s][kx][ky]
    """


class ConvCPLayer(Record):
    kind: Literal["conv_cp"]
    s: int
    o: int
    kx: int
    ky: int
    rank: int
    lambdas: list[float]
    a: list[list[float]]
    b: list[list[float]]
    c: list[list[list[float]]]


class FCDenseLayer(Record):
    kind: Literal["fc_dense"]
    s1: int
    s2: int
    t1: int
    t2: int
    weights: list[list[list[list[float]]]]
    """
    Indexed [s1][s2][t1][t2]
    """


class FCCPLayer(Record):
    kind: Literal["fc_cp"]
    s1: int
    s2: int
    t1: int
    t2: int
    rank: int
    mode: Literal["vectors", "matrices"]
    lambdas: list[float]
    a: Optional[list[list[float]]] = None
    b: Optional[list[list[float]]] = None
    c: Optional[list[list[float]]] = None
    d: Optional[list[list[float]]] = None
    k1: Optional[list[list[list[float]]]] = None
    k2: Optional[list[list[list[float]]]] = None


PlainLayer = Annotated[
    Union[ConvDenseLayer, ConvCPLayer, FCDenseLayer, FCCPLayer],
    Field(discriminator="kind"),
]


class SkipLayer(Record):
    kind: Literal["skip"]
    inner: PlainLayer


LayerEntry = Annotated[
    Union[ConvDenseLayer, ConvCPLayer, FCDenseLayer, FCCPLayer, SkipLayer],
    Field(discriminator="kind"),
]


class ModelFile(Record):
    version: Literal[1] = 1
    input_shape: list[int]
    layers: list[LayerEntry]


class Sample(Record):
    x: list[float]
    """
    Input flattened row-major
    """
    y: int


class DatasetFile(Record):
    version: Literal[1] = 1
    num_classes: int
    input_shape: list[int]
    samples: list[Sample]


class ReportFile(Record):
    version: Literal[1] = 1
    properties: list[PropertyTable] = []
    plan: Optional[CompressionPlan] = None
    verification: Optional[VerificationReport] = None
    bound: Optional[BoundReport] = None
    gamma_sweep: list[BoundReport] = []
    als_errors: Optional[list[float]] = None
    """
    Relative reconstruction error per layer from decomposition
    """
