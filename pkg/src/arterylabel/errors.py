"""Exception types shared across the package."""


class ArteryLabelError(Exception):
    """Base class for package errors."""


class UnitsError(ArteryLabelError):
    """Operation applied to a centerline in the wrong unit system."""


class DegenerateInputError(ArteryLabelError):
    """Geometry input too small to be meaningful (e.g. <2 points)."""


class ShapeError(ArteryLabelError):
    """Array input with the wrong dimensionality."""


class ConfigError(ArteryLabelError):
    """Invalid configuration or unusable input data."""


class SchemaValidationError(ArteryLabelError):
    """A JSON document does not match its declared schema."""


class ModelFormatError(ArteryLabelError):
    """Model file is corrupted, truncated, or has an unknown version."""


class ArchitectureMismatchError(ArteryLabelError):
    """Models with different layer shapes used together."""


class TrainingDivergedError(ArteryLabelError):
    """Training produced a non-finite loss."""
