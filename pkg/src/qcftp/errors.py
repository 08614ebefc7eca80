"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input failed a structural check (Hermiticity, stochasticity, ...)."""


class CoveringInfeasible(ValueError):
    """Greedy covering could not keep the intervals disjoint for this eps."""


class NotLumpableError(ValueError):
    def __init__(self, message, worst_pair=None, violation=None):
        super().__init__(message)
        self.worst_pair = worst_pair
        self.violation = violation


class NotPrimitiveError(ValueError):
    """Chain has no unique, full-support stationary distribution."""


class DeadLabelError(ValueError):
    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class CftpAbort(RuntimeError):
    """Raised when a run exceeds its depth cap or measurement budget.

    ``stats`` holds whatever was gathered before the abort so callers can
    still report it.
    """

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats
