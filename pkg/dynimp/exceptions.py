from typing import Iterable, Optional


class DynImpError(Exception):
    """Base class for every expected failure raised by the package."""


class IngestError(DynImpError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class UnknownLabelError(IngestError):
    def __init__(self, label: str, known: Iterable[str], line: Optional[int] = None):
        self.label = label
        self.known = list(known)
        super().__init__(f"unknown label '{label}'; known labels: {', '.join(self.known)}", line)


class EmptyDatasetError(DynImpError):
    pass


class ScalingError(DynImpError):
    def __init__(self, feature: str, message: str = "has no observed cells"):
        self.feature = feature
        super().__init__(f"feature '{feature}' {message}")


class ShapeMismatchError(DynImpError):
    pass


class ScaleDomainError(DynImpError):
    pass


class TrainingDivergedError(DynImpError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class GradCheckError(DynImpError):
    pass


class NonDeterministicClosureError(GradCheckError):
    pass


class ClassAbsentError(DynImpError):
    def __init__(self, class_name: str):
        self.class_name = class_name
        super().__init__(f"class '{class_name}' has no windows in the training split")


class ConfigError(DynImpError):
    pass


class FormatVersionError(DynImpError):
    pass


class EmptyWindowError(DynImpError):
    pass
