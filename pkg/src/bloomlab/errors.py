"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter is outside its documented range."""


class DomainError(ValueError):
    """An element lies outside the filter's universe."""


class UnsupportedOperationError(RuntimeError):
    """The requested operation is not defined for this filter kind."""
