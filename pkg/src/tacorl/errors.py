"""Exception hierarchy shared across the package."""


class TacoError(Exception):
    """Base class for all library errors."""


class EmptyInput(TacoError, ValueError):
    pass


class ParseError(TacoError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(TacoError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DimError(TacoError, ValueError):
    pass


class VocabError(TacoError, IndexError):
    pass


class NumericalError(TacoError, ArithmeticError):
    def __init__(self, message: str, tensor: str | None = None):
        self.tensor = tensor
        super().__init__(message)


class EmptyCompression(TacoError, ValueError):
    pass


class ConfigError(TacoError):
    pass


class OracleUnavailable(TacoError):
    pass


class VersionError(TacoError):
    pass


class IntegrityError(TacoError):
    pass
