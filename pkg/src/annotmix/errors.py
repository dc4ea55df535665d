"""Exception types shared across the package."""


class AnnotMixError(Exception):
    """Base class for all errors raised by annotmix."""


class ShapeError(AnnotMixError, ValueError):
    pass


class ContractError(AnnotMixError, ValueError):
    pass


class DomainError(AnnotMixError, ValueError):
    pass


class IngestionError(AnnotMixError, ValueError):
    """Malformed input file. ``row`` is the 1-based data row when known."""

    def __init__(self, message, path=None, row=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if row is not None:
            where += f" (row {row})"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.row = row


class ConfigError(AnnotMixError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class DivergenceError(AnnotMixError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class NotComputable(AnnotMixError):
    """Raised when a metric is undefined for the given inputs."""
