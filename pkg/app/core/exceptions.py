from typing import Iterable, List, Optional, Sequence


class EvidentialError(Exception):
    """Base class for every error raised by the toolkit"""


class DomainError(EvidentialError, ValueError):
    """Input outside the domain of an operation"""

    def __init__(self, message: str, violations: Optional[Iterable[str]] = None):
        self.violations: List[str] = list(violations or [])
        if self.violations:
            message = f"{message}: {', '.join(self.violations)}"
        super().__init__(message)


class ShapeError(EvidentialError, ValueError):
    """Array dimensions do not match the network or dataset"""


class StateError(EvidentialError, RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)"""


class ConfigurationError(EvidentialError, ValueError):
    """Invalid or inconsistent configuration"""


class CsvParseError(DomainError):
    """Malformed CSV input"""

    def __init__(self, message: str, row: int, column: Optional[int] = None):
        self.row = row
        self.column = column
        location = f"row {row}" if column is None else f"row {row}, column {column}"
        super().__init__(f"{message} at {location}")


class TrainingDivergedError(EvidentialError, RuntimeError):
    """Loss became NaN or infinite during training"""

    def __init__(self, iteration: int, batch_indices: Sequence[int]):
        self.iteration = iteration
        self.batch_indices = [int(i) for i in batch_indices]
        preview = self.batch_indices[:10]
        suffix = "..." if len(self.batch_indices) > 10 else ""
        super().__init__(
            f"Non-finite loss at iteration {iteration}; batch indices {preview}{suffix}"
        )
