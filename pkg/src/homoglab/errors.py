"""Exception hierarchy.

Two families matter to callers: configuration problems (``ConfigError``)
and numerical diagnostics that fired (``DiagnosticError``).  The command line
maps them to exit codes 1 and 2.
"""


class ConfigError(ValueError):
    """Invalid user input or configuration."""


class GridError(ConfigError):
    """Grid construction or grid mismatch problem."""


class DiagnosticError(RuntimeError):
    """A numerical check failed; the result should not be trusted."""


class NonConvergence(DiagnosticError):
    """Iterative solver did not reach the requested residual."""


class BreakdownDetected(DiagnosticError):
    """Krylov recurrence broke down."""


class KernelDimensionSuspect(DiagnosticError):
    """The transposed generator appears to have more than one kernel vector."""


class NegativeMeasure(DiagnosticError):
    """Computed invariant measure is not positive."""


class PlateauNotReached(DiagnosticError):
    """Cylinder measure has not settled to its periodic limit at the anchors."""


class FitUnstable(DiagnosticError):
    """Too few usable samples for an exponential or power-law fit."""


class TailNotDecayed(DiagnosticError):
    """A decaying quantity still carries energy at the truncation ends."""


class CompatibilityFailure(DiagnosticError):
    """Right-hand side violates the solvability condition of a Poisson problem."""


class DiscretizationDominates(DiagnosticError):
    """Grid error is comparable to the homogenization error being measured."""


class CenteringDefect(DiagnosticError):
    """Drift is not centred with respect to the invariant measure."""
