"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A user-supplied parameter is outside its documented range."""


class ChainError(ValueError):
    """A chain definition is malformed (bad row, bad state key, ...)."""


class NumericalError(RuntimeError):
    """An exact computation failed or fell outside its trust region."""
