"""Exception types raised across the package."""


class DecoyError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(DecoyError, ValueError):
    """A caller violated an operation's precondition."""


class MapFormatError(DecoyError, ValueError):
    """A map file could not be parsed. ``where`` names the line or field."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


class GeometryValidationError(DecoyError, ValueError):
    """Level geometry parsed but violates an invariant."""


class GenerationError(DecoyError):
    """Waypoint generation could not start or produced nothing usable."""


class VerificationError(DecoyError):
    """Edge verification left a graph too fragmented to trust."""


class ConfigError(DecoyError, ValueError):
    """Simulator configuration is inconsistent with the level or graph."""


class ModelError(DecoyError):
    """A damage model failed to load, run, or train."""


class RoundFormatError(DecoyError, ValueError):
    """A round corpus file has the wrong format or version."""
