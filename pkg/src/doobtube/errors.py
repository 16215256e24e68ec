"""Exception hierarchy shared by every stage of the pipeline."""


class DoobTubeError(Exception):
    """Base class; ``stage`` is filled in by the experiment runner."""

    stage = None


class DomainError(DoobTubeError, ValueError):
    pass


class ResolutionError(DoobTubeError, ValueError):
    def __init__(self, message, axis_value=None):
        super().__init__(message)
        self.axis_value = axis_value


class SolverError(DoobTubeError, RuntimeError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class BudgetError(DoobTubeError, RuntimeError):
    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


class StatisticalPowerError(DoobTubeError, ValueError):
    pass


class PreconditionError(DoobTubeError, ValueError):
    pass


class ValidationError(DoobTubeError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
