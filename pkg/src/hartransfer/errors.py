"""Exception types shared across the package."""


class HarTransferError(Exception):
    """Base class for all package errors."""


class SchemaError(HarTransferError):
    """A dataset file does not match the declared column layout."""


class IngestionError(HarTransferError):
    """A dataset directory could not be ingested."""


class ConfigurationError(HarTransferError):
    """An invalid configuration value or unknown option."""


class StatsError(HarTransferError):
    """Channel statistics could not be computed."""


class ShapeError(HarTransferError):
    """A model graph does not propagate shapes consistently."""


class FoldError(HarTransferError):
    """A fold split cannot support the requested operation."""


class TrainingError(HarTransferError):
    """Training aborted (non-finite loss, empty pseudo-label set, ...)."""


class DependencyError(HarTransferError):
    """A pipeline stage is missing an upstream artifact."""
