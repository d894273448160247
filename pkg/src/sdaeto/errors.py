"""Exception types shared across the package."""


class InfeasibleError(ValueError):
    """Raised when a requirement (rate, quota, capacity) cannot be met."""


class InstanceTooLargeError(ValueError):
    """Raised when an exact solver is asked to handle an oversized instance."""
