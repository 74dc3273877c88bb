"""Exception hierarchy shared across the package."""


class DataError(Exception):
    """Invalid or inconsistent data (files, corpora, splits, models)."""


class ConfigError(Exception):
    """Invalid configuration or command-line usage."""


class CorpusError(DataError):
    """Malformed or referentially broken corpus input."""


class FeatureError(DataError):
    """Feature assembly failure (missing columns, dimension mismatch)."""


class SplitError(DataError):
    """Split constraints unsatisfiable or violated."""


class ModelError(DataError):
    """Model construction, persistence, or scoring failure."""


class OverflowGuardError(DataError):
    """A loss term overflowed despite the log-domain guard."""
