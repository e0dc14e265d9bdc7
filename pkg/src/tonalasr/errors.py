"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class TonalAsrError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TonalAsrError):
    """Invalid configuration: bad option values, unknown keys, missing files."""


class DataError(TonalAsrError):
    """Malformed or inconsistent input data (manifests, lexica, ARPA, lattices)."""


class NumericalError(TonalAsrError):
    """Numerically infeasible request: zero-energy signals, no valid path, etc."""
