class GailLabError(Exception):
    """Base class for every error raised by gaillab."""


class DimensionMismatch(GailLabError, ValueError):
    pass


class InvalidMdp(GailLabError, ValueError):
    pass


class InvalidPolicy(GailLabError, ValueError):
    pass


class SingularSystem(GailLabError, ArithmeticError):
    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class NoAnchors(GailLabError, ValueError):
    pass


class DegenerateSigma(GailLabError, ValueError):
    pass


class InvalidPerturbation(GailLabError, ValueError):
    pass


class DomainError(GailLabError, ValueError):
    pass


class WrongRewardKind(GailLabError, ValueError):
    pass


class ZeroExpertDensity(GailLabError, ValueError):
    pass


class ConfigError(GailLabError, ValueError):
    """Raised for malformed or invalid experiment configuration."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    def __init__(self, key: str, constraint: str):
        super().__init__(f"{key}: {constraint}")
        self.key = key
        self.constraint = constraint


class MixedFixtures(GailLabError, ValueError):
    pass


class RecordIoError(GailLabError, OSError):
    def __init__(self, message: str, path):
        super().__init__(f"{message}: {path}")
        self.path = str(path)
