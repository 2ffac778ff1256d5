"""Exception types shared across the toolkit.

Each maps to a CLI exit-code category (see cli.EXIT_CODES).
"""


class ConfigError(ValueError):
    """A configuration value violates one of its invariants."""


class ShapeError(ValueError):
    """Array shapes do not match an operation's contract."""


class SimulationError(RuntimeError):
    """Scene synthesis failed (e.g. a scatterer left the unambiguous range)."""


class PlacementError(SimulationError):
    """A gesture template cannot be realized at the requested placement."""


class DataError(RuntimeError):
    """Dataset content is unusable (e.g. a class missing from a training split)."""


class ManifestError(RuntimeError):
    """A manifest file is missing required fields or references."""


class IntegrityError(RuntimeError):
    """A referenced file failed hash or truncation validation."""
