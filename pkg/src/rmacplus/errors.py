"""Exception hierarchy shared by the whole package."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PipelineError):
    """Malformed input files or data that violates a format contract."""


class ConfigError(PipelineError):
    """Invalid run configuration (bad keys, missing paths, bad values)."""
