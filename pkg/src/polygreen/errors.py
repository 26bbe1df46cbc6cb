"""Exception types shared across the package.

Numerical routines distinguish between *domain* failures (the requested
evaluation is outside the validity region of the underlying formula) and
*budget/convergence* failures (the evaluation is legitimate but the requested
tolerance could not be certified).
"""


class DomainError(ValueError):
    """Arguments outside the mathematical domain of an operation."""


class UnsupportedOrderError(DomainError):
    """Bessel order outside the supported range."""


class OutOfRegimeError(DomainError):
    """Evaluation requested outside the regime where the estimate applies."""


class PreconditionError(ValueError):
    """A pipeline precondition failed; the message names the violated inequality."""


class EstimateNotApplicableError(ValueError):
    """Envelope composition hypotheses are not met.

    ``failed_inequality`` states which hypothesis failed, e.g.
    ``"2p - rho <= n - beta"``.
    """

    def __init__(self, message, failed_inequality=None):
        super().__init__(message)
        self.failed_inequality = failed_inequality


class ConvergenceError(RuntimeError):
    """Quadrature or summation did not reach the requested tolerance.

    ``best_estimate`` and ``error_estimate`` carry the best available result.
    """

    def __init__(self, message, best_estimate=None, error_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.error_estimate = error_estimate


class BudgetError(ConvergenceError):
    """The work budget was exhausted before the tolerance was certified."""
