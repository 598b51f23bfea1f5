"""Exception types raised across the package."""


class ParameterError(ValueError):
    """Invalid argument: wrong shape, non-positive-definite matrix, bad range."""


class NumericalError(ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class DegenerateWeightsError(NumericalError):
    """All particle weights underflowed to zero."""

    def __init__(self, time_index, iteration=None):
        self.time_index = time_index
        self.iteration = iteration
        msg = f"all particle weights are zero at time index {time_index}"
        if iteration is not None:
            msg += f" (Gibbs iteration {iteration})"
        super().__init__(msg)


class DivergenceError(NumericalError):
    """A rollout produced a non-finite or exploding state."""

    def __init__(self, time_index, scenario=None):
        self.time_index = time_index
        self.scenario = scenario
        where = "" if scenario is None else f" in scenario {scenario}"
        super().__init__(f"state diverged at time {time_index}{where}")


class SolverError(RuntimeError):
    """The OCP solver failed in a way that prevents further use of its output."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
