"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class SetShapeError(Exception):
    """Base class for package errors."""


class ConfigError(SetShapeError):
    """Invalid configuration value or inconsistent config combination."""


class DataError(SetShapeError):
    """Problem with input data (meshes, shards, checkpoints)."""


class MeshFormatError(DataError):
    """Unparseable mesh file; carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EmptyMeshError(DataError):
    pass


class DegenerateMeshError(DataError):
    """Mesh whose geometry leaves an operation undefined (e.g. zero extent)."""


class ShardError(DataError):
    pass


class ShardMagicError(ShardError):
    pass


class ShardTruncatedError(ShardError):
    pass


class ShardChecksumError(ShardError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(SetShapeError):
    """Non-finite loss or other numerical failure during optimization."""

    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot
        super().__init__(message)
