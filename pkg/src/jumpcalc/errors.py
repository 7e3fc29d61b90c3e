class JumpcalcError(Exception):
    pass


class DomainError(JumpcalcError, ValueError):
    """Arguments outside the domain of an operation."""


class EvaluationError(JumpcalcError, ValueError):
    """A process component evaluated to a non-finite or invalid value."""


class CouplingError(JumpcalcError, ValueError):
    pass


class TransformError(JumpcalcError, ValueError):
    pass


class TimeChangeError(JumpcalcError, ValueError):
    pass


class SimulationError(JumpcalcError, RuntimeError):
    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last valid time {last_time!r})")
        self.last_time = last_time


class ContractViolation(JumpcalcError, AssertionError):
    """A sampled jump exceeded the declared jump bound."""


class SpecMismatchError(JumpcalcError, ValueError):
    pass
