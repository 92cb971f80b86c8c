"""Error taxonomy shared across the package."""


class DomainError(ValueError):
    """A value violates an operation's stated domain (bad degree, point outside [0,1]^2, ...)."""


class StructuralError(ValueError):
    """Arguments are individually fine but structurally incompatible (wrong knot nesting, foreign cell, ...)."""


class StalenessError(RuntimeError):
    """A coefficient vector refers to an older space generation than the one it is used with."""


class NumericalError(RuntimeError):
    """An iterative solve failed to converge; carries the residual context in the message."""


class CapacityWarning(UserWarning):
    """A cell at the deepest allowed level was marked for refinement and skipped."""
