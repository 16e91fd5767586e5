from typing import Any, List, Optional


class ShapeMismatchError(ValueError):
    """Raised when a tensor does not fit the layer that consumes it."""

    def __init__(self, layer: str, expected: Any, got: Any):
        self.layer = layer
        self.expected = expected
        self.got = got
        super().__init__(f"Shape mismatch at layer {layer}: expected {expected}, got {got}")


class CifarParseError(ValueError):
    """Raised for malformed CIFAR-10 binary records; `offset` is the byte offset of the bad record."""

    def __init__(self, path: str, offset: int, reason: str):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: {reason} at byte offset {offset}")


class PartitionError(ValueError):
    pass


class ClientTrainingError(RuntimeError):
    def __init__(self, client_id: int, cause: BaseException):
        self.client_id = client_id
        super().__init__(f"Client {client_id} failed: {cause}")


class ExperimentConfigError(ValueError):
    """Invalid experiment configuration. `errors` holds (dotted field path, message) pairs."""

    def __init__(self, errors: List[tuple], source: Optional[str] = None):
        self.errors = errors
        self.source = source
        lines = [f"  {loc}: {msg}" for loc, msg in errors]
        where = f" in {source}" if source else ""
        super().__init__(f"Invalid experiment config{where}:\n" + "\n".join(lines))


class ModelFileError(ValueError):
    """Malformed or unsupported model file."""
