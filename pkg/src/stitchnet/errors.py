"""Exception hierarchy shared across the package."""


class StitchNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StitchNetError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(StitchNetError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericalError(StitchNetError, ArithmeticError):
    """Non-finite values or an iterative routine failed to converge."""


class TrainingError(NumericalError):
    """Training diverged; carries the last finite loss and the offending config."""

    def __init__(self, message, *, last_finite_loss=None, config_id=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss
        self.config_id = config_id


class OrderingError(ContractError):
    """Anchors cannot be strictly ordered by compute cost."""


class InfeasibleBudgetError(ContractError):
    """No configuration fits within the requested budget."""
