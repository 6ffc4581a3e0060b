"""Exception hierarchy shared by all modules."""


class LrMoeError(ValueError):
    """Base class for every error raised by this package."""


class SchemaError(LrMoeError):
    pass


class RowError(LrMoeError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LabelError(LrMoeError):
    pass


class EmptyLogError(LrMoeError):
    pass


class SplitError(LrMoeError):
    pass


class FitError(LrMoeError):
    pass


class EncodingError(LrMoeError):
    pass


class ShapeError(LrMoeError):
    pass


class ModelFormatError(LrMoeError):
    """Malformed or internally inconsistent model document."""


class ConfigError(LrMoeError):
    pass


class DivergenceError(LrMoeError):
    def __init__(self, phase: str, epoch: int):
        super().__init__(f"loss became non-finite during {phase} at epoch {epoch}")
        self.phase = phase
        self.epoch = epoch


class UndefinedAUCError(LrMoeError):
    pass
