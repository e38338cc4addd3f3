"""Exception taxonomy.

ConfigError covers bad configuration or usage and maps to exit code 2 in
the CLI.  NumericalError and its subclasses cover runtime numerical
failures and map to exit code 3.  Plain ValueError is reserved for
programming-contract violations (wrong shapes, mismatched tapes).
"""


class ConfigError(ValueError):
    """Invalid configuration file, preset, or CLI usage."""


class NumericalError(RuntimeError):
    """Base class for numerical failures at runtime."""


class EvaluationError(NumericalError):
    """Non-finite objective data at a point; carries the point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class TrainingError(NumericalError):
    """Non-finite loss or residual during training."""

    def __init__(self, message, iteration=None, point=None):
        super().__init__(message)
        self.iteration = iteration
        self.point = point


class DynamicsError(NumericalError):
    """Non-finite state during sampling dynamics."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class MetricError(NumericalError):
    """Degenerate metric input (zero norm, empty data)."""


class SolverError(NumericalError):
    """Finite-difference solver failure (singular or non-dominant system)."""


class OracleRangeError(NumericalError):
    """Quadrature oracle left its representable range."""
