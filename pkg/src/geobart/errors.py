"""Exception types shared across the package."""


class GeoBartError(Exception):
    """Base class for all package errors."""


class NonFiniteValue(GeoBartError, ValueError):
    """An input table contains NaN or infinite entries."""


class DatasetError(GeoBartError, ValueError):
    """Malformed dataset (missing columns, inconsistent clusters, ...)."""


class NotPD(GeoBartError, ArithmeticError):
    """A matrix expected to be positive definite could not be factorized."""


class MeshError(GeoBartError, ValueError):
    """Invalid mesh configuration or a point outside the mesh."""


class ConfigError(GeoBartError, ValueError):
    """Unknown or invalid configuration key."""
