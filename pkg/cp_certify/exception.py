from typing import Any, Optional

__all__ = [
    "CPCertifyException",
    "ConvergenceError",
    "InfeasiblePlan",
    "NonFiniteError",
    "NotDecomposed",
    "RankCapExceeded",
    "SchemaError",
    "ShapeMismatch",
    "TrainingDiverged",
    "VerificationFailed",
]


class CPCertifyException(Exception):
    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.__class__.__name__, "message": self.message}

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}: {self.message}>"

    def __str__(self):
        return self.__repr__()


class ShapeMismatch(CPCertifyException, ValueError):
    def __init__(self, message: str, layer: Optional[int] = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class RankCapExceeded(CPCertifyException, ValueError):
    def __init__(self, rank: int, cap: int, layer: Optional[int] = None):
        self.rank = rank
        self.cap = cap
        self.layer = layer
        where = f"layer {layer}: " if layer is not None else ""
        super().__init__(
            f"{where}rank {rank} exceeds the polyadic rank cap {cap}"
        )


class NonFiniteError(CPCertifyException, ValueError):
    pass


class SchemaError(CPCertifyException, ValueError):
    pass


class ConvergenceError(CPCertifyException):
    def __init__(self, message: str, last: Any = None):
        self.last = last
        super().__init__(message)


class NotDecomposed(CPCertifyException):
    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"layer {layer} is dense, decompose the model first")


class InfeasiblePlan(CPCertifyException):
    def __init__(self, layer: int, reason: str):
        self.layer = layer
        self.reason = reason
        super().__init__(f"layer {layer}: {reason}")


class VerificationFailed(CPCertifyException):
    def __init__(self, sample: int, residual: float, epsilon: float):
        self.sample = sample
        self.residual = residual
        self.epsilon = epsilon
        super().__init__(
            f"sample {sample}: relative output deviation {residual:.6g} "
            f"exceeds epsilon {epsilon:.6g}"
        )


class TrainingDiverged(CPCertifyException):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss is not finite at epoch {epoch}")
