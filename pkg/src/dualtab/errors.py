"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError and DataError exit 2
(bad input), DivergenceError exits 3 (training blew up).
"""


class DualtabError(Exception):
    """Base class for package-level failures."""


class ConfigError(DualtabError):
    """An experiment spec or model config is invalid or inconsistent."""


class DataError(DualtabError):
    """A dataset file is malformed or contradicts its schema."""


class DivergenceError(DualtabError):
    """Training produced a non-finite loss or gradient."""
