"""Exception hierarchy shared by all modules."""


class QubitLineError(Exception):
    """Base class for every error raised by this package."""


class ModelError(QubitLineError, ValueError):
    """Invalid physical parameters."""


class RWAViolationError(ModelError):
    """Drive detuning too large for the rotating-wave approximation."""


class NumericalError(QubitLineError, ArithmeticError):
    """A solver could not produce a trustworthy result."""


class DegenerateSteadyStateError(NumericalError):
    pass


class TruncationError(NumericalError):
    """Fock-space truncation of the filter mode is too small."""


class IntegrationError(NumericalError):
    pass


class TrajectoryDivergenceError(NumericalError):
    pass


class UndefinedTraceError(NumericalError):
    """g2 requested for a field with (numerically) zero mean flux."""


class GridError(QubitLineError, ValueError):
    pass


class CalibrationError(QubitLineError, ValueError):
    """Net signal power is not positive after noise subtraction."""


class ConfigError(QubitLineError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
