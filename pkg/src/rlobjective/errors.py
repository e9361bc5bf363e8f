"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigurationError(ValueError):
    """A schedule, trainer or CLI configuration is invalid."""


class DegenerateScheduleError(ArithmeticError):
    """An induced transform cannot be normalized because h_M(1) == 0."""


class ObjectiveUndefinedError(ArithmeticError):
    """A transform was evaluated at one of its poles (e.g. log at p = 0)."""


class BudgetExceededError(RuntimeError):
    """Exhaustive enumeration would exceed the allowed number of tuples."""

    def __init__(self, required: int, budget: int):
        super().__init__(
            f"enumeration needs {required} tuples but the budget is {budget}"
        )
        self.required = required
        self.budget = budget


class DivergenceError(FloatingPointError):
    """A training update produced a non-finite parameter."""

    def __init__(self, step: int):
        super().__init__(
            f"non-finite parameter after update at step {step}; "
            "the step size is probably too large"
        )
        self.step = step
