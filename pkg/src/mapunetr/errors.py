"""Exception hierarchy shared by every mapunetr module."""


class MapunetrError(Exception):
    """Base class for all library errors."""


class ShapeError(MapunetrError, ValueError):
    """Incompatible extents, channel counts or grid sizes."""


class BoundsError(ShapeError):
    """A requested window does not fit inside the source."""


class ConfigError(MapunetrError, ValueError):
    """Invalid hyperparameter or configuration value."""


class ContractError(MapunetrError, RuntimeError):
    """A caller violated an operation's preconditions."""


class FormatError(MapunetrError, ValueError):
    """Malformed file on disk (dataset, image or checkpoint)."""


class VersionError(FormatError):
    """Checkpoint written by a newer, unsupported format version."""


class PairingError(FormatError):
    """An image has no matching mask (or the reverse)."""


class DatasetError(MapunetrError, ValueError):
    """Empty or otherwise unusable dataset."""
