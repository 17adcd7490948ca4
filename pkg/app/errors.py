"""
Exception hierarchy shared by the simulator, the command line and the API.

InvalidInputError covers anything a user can fix by changing flags or files.
ContractViolationError signals a broken internal contract (an encoder bug,
a geometry that cannot be transposed, a MAC fed the wrong format).
"""


class MxSimError(Exception):
    """Base class for every error raised by the simulator."""


class InvalidInputError(MxSimError, ValueError):
    """Bad user input: unknown names, malformed files, mismatched dimensions."""


class NonFiniteValueError(InvalidInputError):
    """A quantizer was handed NaN or Inf."""


class ContractViolationError(MxSimError):
    """An internal contract was violated."""


class ScaleRangeError(ContractViolationError):
    """A block would need the reserved E8M0 code 255."""


class GeometryError(ContractViolationError):
    """Block geometry does not support the requested operation."""


class ModeMismatchError(ContractViolationError):
    """Operand element format does not match the MAC operating mode."""


class DatapathRangeError(ContractViolationError):
    """An L1/L2 adder input is outside the range the hardware supports."""


class TrainingDivergedError(MxSimError):
    """Training produced a non-finite loss."""
