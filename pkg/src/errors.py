"""
Exception hierarchy for the audit toolkit.

Library code raises these; orchestration (engine, main) decides which ones are
recoverable and how they map to CLI exit codes.
"""


class AuditError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AuditError, ValueError):
    """Invalid or unknown configuration key, or infeasible settings."""


class SchemaError(AuditError, ValueError):
    """Input table or vector does not match the expected schema."""


class TrainingError(AuditError, RuntimeError):
    """A model could not be trained (e.g. single-class training set)."""


class CalibrationError(AuditError, RuntimeError):
    """Conformal calibration is impossible for the given training data."""


class RashomonError(AuditError, RuntimeError):
    """Every Rashomon candidate is degenerate on the validation table."""


class InvariantError(AuditError, AssertionError):
    """An internal invariant was breached (e.g. train/evaluation leakage)."""
