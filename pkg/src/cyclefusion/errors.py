"""Exception hierarchy.

Errors are grouped into families so the command line can map them onto
exit codes: ``DataError`` -> 3, ``NumericError`` -> 4, ``UsageError`` -> 2.
"""


class CycleFusionError(Exception):
    """Base class for every error raised by the package."""


class UsageError(CycleFusionError, ValueError):
    pass


class DataError(CycleFusionError, ValueError):
    pass


class NumericError(CycleFusionError, ArithmeticError):
    pass


# --- ingestion -------------------------------------------------------------

class MissingSensorFile(DataError):
    def __init__(self, sensor):
        self.sensor = sensor
        super().__init__(f"missing data file for sensor {sensor}")


class InconsistentCycleCount(DataError):
    pass


class ParseError(DataError):
    def __init__(self, file, row, col, token=None):
        self.file, self.row, self.col = file, row, col
        super().__init__(f"{file}: cannot parse token {token!r} at row {row}, col {col}")


class LengthMismatch(DataError):
    def __init__(self, sensor, expected, got):
        self.sensor, self.expected, self.got = sensor, expected, got
        super().__init__(f"sensor {sensor}: expected {expected} samples per cycle, got {got}")


class UnknownSetpoint(DataError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"accumulator pressure {value!r} is not a known setpoint")


class InvalidSpec(DataError):
    pass


# --- preprocessing ---------------------------------------------------------

class EmptySeries(DataError):
    pass


class InvalidTarget(UsageError):
    pass


class UnknownSensor(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class TooFewCycles(DataError):
    pass


# --- feature pipeline ------------------------------------------------------

class TooShort(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class DegenerateTargets(DataError):
    pass


class InvalidK(UsageError):
    pass


class ClassTooSmall(DataError):
    pass


class NumericalFailure(NumericError):
    pass


# --- networks --------------------------------------------------------------

class ShapeError(UsageError):
    pass


class InvalidRate(UsageError):
    pass


class InputTooShort(UsageError):
    pass


class DivergenceDetected(NumericError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class EmptyEvaluation(UsageError):
    pass


class NoViableTrial(NumericError):
    pass


class TestAccessViolation(CycleFusionError, RuntimeError):
    """Test indices were requested before model selection was finalized."""


class IoError(CycleFusionError, OSError):
    pass
