"""Exception types, mapped to process exit codes by the command line tool."""


class ConfigError(ValueError):
    """Invalid configuration or arguments (exit code 2)."""


class DataError(RuntimeError):
    """Missing or malformed input data (exit code 3)."""


class NumericError(RuntimeError):
    """Numerical failure such as divergence or a singular system (exit code 4)."""
