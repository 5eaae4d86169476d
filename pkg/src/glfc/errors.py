"""Exception hierarchy. Each family maps to one CLI exit code."""


class GLFCError(Exception):
    exit_code = 1


class ConfigError(GLFCError, ValueError):
    """Invalid architecture or run configuration."""

    exit_code = 2


class ContractError(GLFCError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 2


class ShapeError(ContractError):
    pass


class DataError(GLFCError):
    exit_code = 3


class FormatError(DataError):
    """Malformed GVOL / GCKPT1 bytes. ``offset`` is where parsing stopped."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(DataError):
    def __init__(self, message: str, tensor: str = ""):
        super().__init__(message)
        self.tensor = tensor


class DatasetError(DataError):
    def __init__(self, message: str, orphans=()):
        super().__init__(message)
        self.orphans = list(orphans)


class EvaluationError(DataError):
    pass


class VerificationError(GLFCError):
    exit_code = 4
