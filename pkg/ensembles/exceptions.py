"""
Error hierarchy for the ensembles library.

Every numerical failure raised by this package derives from EnsembleError so callers
(management commands, Celery tasks) can map them to exit codes without catching
unrelated exceptions.
"""


class EnsembleError(Exception):
    """Base class for all library errors."""


class ConfigurationError(EnsembleError):
    """Invalid preset, parameter or state-space description."""


class EnumerationLimitError(EnsembleError):
    """State space too large for enumeration."""

    def __init__(self, cardinality, cap):
        self.cardinality = cardinality
        self.cap = cap
        super().__init__(
            f"state space too large for enumeration: {cardinality} configurations (cap {cap})"
        )


class BoundaryError(EnsembleError):
    """Evaluation at a zero of phi_minus_N."""


class VerificationFailure(EnsembleError):
    """An identity that must hold exactly did not hold within tolerance."""


class SolverError(EnsembleError):
    """Equilibrium solver did not converge."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class AssumptionViolation(EnsembleError):
    """Band structure incompatible with the one-band-per-interval regime."""


class ContourError(EnsembleError):
    """Contour touches a branch cut or an evaluation point lies inside a contour."""


class ContractViolation(EnsembleError):
    """Input to a contour operation breaks its precondition."""


class EvaluationError(EnsembleError):
    """Evaluation point too close to the support of a measure."""


class DomainError(EnsembleError):
    """Kernel evaluated on its branch cut."""


class InsufficientDataError(EnsembleError):
    """Too few samples or batches for a statistical estimate."""


class MissingStageOutput(EnsembleError):
    """An artifact required by a later stage does not exist."""
