"""Exception types shared across the package."""


class NKDualError(Exception):
    """Base class for package errors."""


class OrderOverflowError(NKDualError):
    """A Hermite order above the configured truncation limit was requested."""


class QuadratureConvergenceError(NKDualError):
    """Node-doubled quadrature estimates disagree beyond tolerance."""


class SeriesDomainError(NKDualError, ValueError):
    """Argument outside the (estimated) convergence domain of a series."""


class SeriesDivergenceError(NKDualError):
    """Partial sums of a truncated series are not settling."""


class StepBoundDomainError(NKDualError):
    """An absT argument left the radius of convergence during a ledger recursion."""

    def __init__(self, edge, argument, message=None):
        self.edge = edge
        self.argument = argument
        super().__init__(
            message
            or f"absT argument {argument!r} outside rocT^2 on edge {edge!r}"
        )


class NonConvergenceError(NKDualError):
    """Iteration hit its cap; carries the last iterate for inspection."""

    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class NotLayerwiseError(NKDualError):
    """Operation requires a chain (layer-wise) skeleton."""


class DerivativeOrderError(NKDualError):
    """Requested activation derivative order is not available."""


class TermBudgetError(NKDualError):
    """Representor-sum term enumeration exceeded the configured cap."""

    def __init__(self, cap, k_violating, message=None):
        self.cap = cap
        self.k_violating = tuple(k_violating)
        super().__init__(
            message
            or f"term budget {cap} exceeded at k={tuple(k_violating)}"
        )
