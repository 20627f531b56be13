"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Shapes, dimensions or schemas do not fit together."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""
