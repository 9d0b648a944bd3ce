"""Exception taxonomy. Every class carries the CLI exit code it maps to."""


class ModlockError(Exception):
    exit_code = 1


class ConfigError(ModlockError):
    """Config file cannot be parsed, violates the schema, or holds out-of-domain values."""

    exit_code = 2


class DomainError(ModlockError):
    """Input outside an operation's mathematical domain (r <= 0, wrong regime, ...)."""

    exit_code = 1


class NoConvergenceError(ModlockError):
    """Iterative solver (Newton shooting, bisection) failed to converge."""

    exit_code = 3

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class AssumptionViolationError(ModlockError):
    """A standing hypothesis of the analysis fails (hyperbolicity, nondegeneracy)."""

    exit_code = 4


class DegenerateOrbitError(NoConvergenceError):
    """Shooting matrix singular: no isolated cycle to converge to."""

    def __init__(self, msg, residual=None):
        super().__init__(msg, residual)


class InvalidOrbitError(AssumptionViolationError):
    """Computed cycle leaves the polar domain (r <= 0)."""


class NondegeneracyError(AssumptionViolationError):
    """A critical point of the locking function has vanishing curvature."""


class BoundUnavailableError(ModlockError):
    """Transit-time bound undefined: the margin over the detuning is not positive."""

    exit_code = 1


class BracketFailureError(ModlockError):
    """Bisection bracket invalid: both endpoints classify the same."""

    exit_code = 3

    def __init__(self, msg, verdicts=None):
        super().__init__(msg)
        self.verdicts = verdicts


class IntegrationFailureError(ModlockError):
    """Step size underflow or state blow-up; carries the last reached time."""

    exit_code = 5

    def __init__(self, msg, t_last=None):
        super().__init__(msg)
        self.t_last = t_last


class InvalidFieldError(ModlockError):
    """Right-hand side returned a non-finite value."""

    exit_code = 5


class ContractViolationError(ModlockError):
    """Mutually inconsistent inputs passed between pipeline stages."""

    exit_code = 1
