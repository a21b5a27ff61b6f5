"""Exception hierarchy.

Every error carries a stable ``exit_code`` used by the command-line tool:
2 for validation problems, 3 for numerical failures, 4 for I/O.
"""


class SKMError(Exception):
    exit_code = 1


class ValidationError(SKMError, ValueError):
    exit_code = 2


class UnknownChain(ValidationError):
    pass


class BoundaryViolation(ValidationError):
    pass


class NumericalError(SKMError):
    exit_code = 3


class FireFromZeroHazard(NumericalError):
    pass


class ZeroHazardEvent(NumericalError):
    pass


class MultipleEventsInCell(NumericalError):
    pass


class TauTooLarge(NumericalError):
    pass


class StateSpaceTooLarge(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class NoNullEvents(NumericalError):
    pass


class DegenerateLabels(NumericalError):
    pass


class NotConverged(NumericalError):
    """Raised only when the caller asks for strict convergence.

    ``result`` holds the best-so-far object.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
