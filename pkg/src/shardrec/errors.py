"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`ShardrecError`, and carries a short ``category`` used by the CLI
when it maps failures to exit codes.
"""


class ShardrecError(Exception):
    category = "error"


class ParseError(ShardrecError, ValueError):
    category = "parse"

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyDatasetError(ShardrecError, ValueError):
    category = "data"


class SplitError(ShardrecError, ValueError):
    category = "data"


class NotFoundError(ShardrecError, KeyError):
    category = "not-found"

    def __str__(self):
        # KeyError quotes its argument; keep messages readable.
        return str(self.args[0]) if self.args else ""


class CapacityError(ShardrecError, ValueError):
    category = "capacity"


class ShapeError(ShardrecError, ValueError):
    category = "shape"


class TrainingError(ShardrecError, RuntimeError):
    category = "training"


class ConfigError(ShardrecError, ValueError):
    category = "config"


class CheckpointError(ShardrecError, OSError):
    category = "io"


class BatchAbortedError(ShardrecError):
    """Raised by batch unlearning; ``reports`` holds the completed part."""

    category = "not-found"

    def __init__(self, message, reports, cause=None):
        super().__init__(message)
        self.reports = reports
        self.cause = cause
