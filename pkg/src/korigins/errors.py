"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor dimensions are inconsistent with the requested operation."""


class ConfigError(ValueError):
    """A spec, builder argument, or training configuration is invalid."""


class FormatError(ValueError):
    """A file (PGM, manifest, checkpoint) is malformed or out of range."""
