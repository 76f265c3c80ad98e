"""Exception types shared across the package.

The CLI maps ``ValidationError`` to exit status 2 and ``EstimationError``
to exit status 3.
"""


class ValidationError(ValueError):
    """Input data or parameters violate a documented invariant."""


class ParseError(ValidationError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class RangeError(ValidationError):
    """A sensitivity parameter lies outside its admissible interval."""

    def __init__(self, name, value, lower, upper):
        self.name = name
        self.value = value
        self.lower = lower
        self.upper = upper
        super().__init__(
            f"{name}={value!r} outside admissible interval [{lower:.6g}, {upper:.6g}]"
        )


class EstimationError(RuntimeError):
    """An estimator cannot be evaluated on the data it was given."""


class FitError(EstimationError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class NumericalError(EstimationError):
    pass


class CapacityError(EstimationError):
    pass
