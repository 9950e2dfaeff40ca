"""Exception types shared across the package."""


class TrainmemError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(TrainmemError):
    """An internal precondition was violated (shape mismatch, missing payload)."""


class ConfigurationError(TrainmemError):
    """A user-supplied configuration is invalid."""


class UnsupportedOperationError(TrainmemError):
    """The requested operation has no executable semantics (cost-model-only node)."""


class ArchSyntaxError(TrainmemError):
    """Architecture file failed to parse."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ArchSemanticError(TrainmemError):
    """Architecture file parsed but describes an invalid graph."""

    def __init__(self, message: str, node_id: str | None = None):
        if node_id is not None:
            message = f"node '{node_id}': {message}"
        super().__init__(message)
        self.node_id = node_id
