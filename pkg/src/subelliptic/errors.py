"""Exception types shared by all modules."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(ValueError):
    """A documented precondition of an operation does not hold."""


class SingularityError(ValueError):
    """A kernel was evaluated at its singular point."""


class DivergenceError(RuntimeError):
    """An iteration cannot converge (for example a Neumann series with norm >= 1)."""


class PreconditionError(RuntimeError):
    """A measured quantity violates a required bound."""
