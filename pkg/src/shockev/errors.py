"""Exception hierarchy.

Two families matter to the CLI: ``ValidationError`` (bad input or config,
exit status 2) and ``NumericError`` (a computation could not produce a
result, exit status 3).
"""


class ShockevError(Exception):
    code = "E_GENERIC"


class ValidationError(ShockevError, ValueError):
    code = "E_VALIDATION"


class ParseError(ValidationError):
    code = "E_PARSE"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    code = "E_CONFIG"


class NumericError(ShockevError, ArithmeticError):
    code = "E_NUMERIC"


class DetectionError(NumericError):
    code = "E_DETECTION"


class EstimationError(NumericError):
    code = "E_ESTIMATION"


class SeedingError(NumericError):
    code = "E_SEEDING"


class GeometryError(NumericError):
    code = "E_GEOMETRY"


class OutOfModelError(GeometryError):
    code = "E_OUT_OF_MODEL"


class ProjectionError(GeometryError):
    code = "E_PROJECTION"


class ReconstructionError(GeometryError):
    code = "E_RECONSTRUCTION"


class FitError(NumericError):
    code = "E_FIT"


class DomainError(NumericError):
    code = "E_DOMAIN"


class SubsonicError(NumericError):
    code = "E_SUBSONIC"
