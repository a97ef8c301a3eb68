"""Exception types shared across the package."""


class SpecError(ValueError):
    """Model specification is inconsistent or unsupported."""


class DataError(ValueError):
    """Dataset does not satisfy the requirements of the model specification."""


class EvaluationFailure(RuntimeError):
    """A numeric evaluation failed at the current parameter value.

    Raised for, e.g., a covariance matrix that is not positive definite or a
    link Jacobian that is not positive.  The fitting loop treats this as
    "reject this parameter value", not as a bug.
    """


class OptimizationError(RuntimeError):
    """The optimizer could not proceed (objective invalid at the start point,
    or the inflated Hessian could not be made positive definite)."""


class ArchiveError(ValueError):
    """A fit archive is malformed, from an incompatible version, or does not
    match the dataset it is being used with."""
