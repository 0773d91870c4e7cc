"""Exception hierarchy shared by every subsystem."""


class DogPainError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


class DimensionError(DogPainError, ValueError):
    pass


class ConfigurationError(DogPainError, ValueError):
    pass


class ContractError(DogPainError, ValueError):
    pass


class NonFiniteError(DogPainError, FloatingPointError):
    pass


class DegeneratePoseError(DogPainError, ValueError):
    pass


class ParseError(DogPainError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class SchemaVersionError(DogPainError, ValueError):
    pass


class LoadError(DogPainError, OSError):
    pass


class CheckpointError(DogPainError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass
