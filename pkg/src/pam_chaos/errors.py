"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class UnsupportedCaseError(ValueError):
    """The requested (kernel, dimension) combination is not implemented."""


class HypothesisViolation(ValueError):
    """A noise configuration falls outside the admissible hypotheses.

    ``clauses`` lists the violated constraints in human-readable form,
    e.g. ``["H0+H1 <= 3/4"]``.
    """

    def __init__(self, clauses):
        self.clauses = list(clauses)
        super().__init__("; ".join(self.clauses))


class NumericalError(ArithmeticError):
    """A numerical routine failed (factorization, non-convergent series)."""


class ResourceError(RuntimeError):
    """A configured size cap would be exceeded."""


class ExtrapolationError(ValueError):
    """A tabulated function was evaluated outside its table."""
