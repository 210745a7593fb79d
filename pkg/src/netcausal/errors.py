"""Exception hierarchy shared across the package.

Each class carries the CLI exit code it maps to, so the command-line layer
never has to guess.
"""

from __future__ import annotations


class NetcausalError(Exception):
    exit_code = 1


class ConfigurationError(NetcausalError, ValueError):
    """Parameters or settings that violate a documented invariant."""

    exit_code = 1


class DataError(NetcausalError, ValueError):
    """Malformed or inconsistent input data (files, arrays)."""

    exit_code = 2


class NumericError(NetcausalError, ArithmeticError):
    """A numerical procedure failed (singular matrix, divergence)."""

    exit_code = 3


class EstimatorInapplicable(NetcausalError):
    """An estimator cannot be evaluated on the given data."""

    exit_code = 2


class EnumerationCapExceeded(NetcausalError):
    """Exact enumeration would exceed the configured cap."""

    exit_code = 3

    def __init__(self, unit: int, size: int, cap: int):
        self.unit = unit
        self.size = size
        self.cap = cap
        super().__init__(
            f"unit {unit}: neighborhood needs {size} assignments, cap is {cap} "
            "and no analytic shortcut applies"
        )
