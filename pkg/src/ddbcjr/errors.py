"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A model or algorithm parameter is outside its valid domain."""


class InvalidInputError(ValueError):
    """Input data (symbols, observations, LLRs) does not fit the model."""


class ContractViolationError(RuntimeError):
    """A function was called without something its contract requires."""


class DegenerateLikelihoodError(ArithmeticError):
    """Every branch of the trellis underflowed at some time step."""

    def __init__(self, step: int):
        super().__init__(f"all forward messages vanished at step {step}")
        self.step = step


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
