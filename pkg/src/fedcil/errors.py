"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/data problems exit 2,
network problems exit 3, internal invariant violations exit 4.
"""


class FedCilError(Exception):
    """Base class for all package errors."""


class ConfigError(FedCilError):
    """Invalid configuration: bad dimensions, unknown keys, missing fields."""


class DimensionError(FedCilError):
    """Shape or length mismatch between arrays that must be congruent."""


class NumericError(FedCilError):
    """Non-finite values or otherwise numerically invalid inputs."""


class DataError(FedCilError):
    """Invalid dataset input (empty data, bad labels, malformed rows)."""


class SchemaError(DataError):
    """CSV/column schema does not match expectations."""


class EmptyBufferError(DataError):
    """Sampling was requested from an empty replay buffer."""


class ProtocolError(FedCilError):
    """Malformed frame or protocol violation on the wire."""


class AggregationError(FedCilError):
    """Client update incompatible with the global model during aggregation."""
