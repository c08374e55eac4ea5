"""Exception hierarchy shared across the package.

Each class maps to one failure category surfaced by the CLI: configuration
problems exit with status 2, everything else with status 1.
"""


class GraphCFError(Exception):
    """Base class for all package errors."""


class StructuralError(GraphCFError):
    """Malformed inputs: bad indices, shape mismatches, broken invariants."""


class ConfigError(GraphCFError):
    """Invalid configuration value, unknown key, or out-of-range parameter."""


class DataFormatError(GraphCFError):
    """Raw interaction file does not match the declared column layout."""


class NumericError(GraphCFError):
    """Non-finite value encountered in a loss, gradient, or update."""


class SamplingError(GraphCFError):
    """Negative sampling cannot produce an item for some user."""


class EvaluationError(GraphCFError):
    """Evaluation requested on a split with no usable ground truth."""
