"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Raised when an operation receives arguments outside its contract.

    The CLI maps this to exit code 2; everything else is an internal error.
    """
