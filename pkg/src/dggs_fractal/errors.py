"""Exception hierarchy shared by all subpackages."""


class DggsFractalError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(DggsFractalError, ValueError):
    pass


class AntipodalArcError(GeometryError):
    pass


class EmptySetError(GeometryError):
    pass


class PoleSpanningError(GeometryError):
    pass


class OutOfFaceError(GeometryError):
    pass


class ResolutionOverflowError(DggsFractalError, ValueError):
    pass


class UnsupportedSymbolError(DggsFractalError, ValueError):
    pass


class CoordinateOverflowError(DggsFractalError, ValueError):
    pass


class ParseError(DggsFractalError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatchError(ParseError):
    pass


class InsufficientRangeError(DggsFractalError):
    pass


class DegenerateAbscissaError(DggsFractalError, ValueError):
    pass


class EmptyInputError(DggsFractalError, ValueError):
    pass


class InvariantError(DggsFractalError):
    """An internal consistency check failed; the result must not be trusted."""
