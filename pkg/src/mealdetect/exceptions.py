class MealDetectError(Exception):
    """Base class for package errors."""


class ParameterError(MealDetectError, ValueError):
    pass


class ScenarioError(MealDetectError, ValueError):
    pass


class ShapeError(MealDetectError, ValueError):
    pass


class DegenerateInterval(MealDetectError, ArithmeticError):
    """An interval whose glucose-excursion area vanishes."""


class EmptyMatrix(MealDetectError, ValueError):
    """Every entry of a sensitivity-relation matrix was degenerate."""

    def __init__(self, msg="all sensitivity-relation entries are degenerate", provenance=None):
        if provenance:
            msg = f"{msg} ({provenance})"
        super().__init__(msg)
        self.provenance = provenance


class DatasetError(MealDetectError, ValueError):
    pass


class StreamError(MealDetectError, ValueError):
    pass


class RegistryError(MealDetectError):
    pass


class ChecksumError(RegistryError):
    pass


class ModelFormatError(MealDetectError, ValueError):
    pass


class ParseError(MealDetectError, ValueError):
    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line
