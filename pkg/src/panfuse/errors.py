"""Exception types raised across the toolkit."""


class PanfuseError(Exception):
    """Base class for all toolkit errors."""


class NoStuffClasses(PanfuseError):
    """The semantic probability map covers no stuff class of the taxonomy."""


class DimensionMismatch(PanfuseError):
    """Two maps or masks that must share dimensions do not."""


class EmptyInput(PanfuseError):
    """An aggregation received an empty collection."""


class NonFiniteInput(PanfuseError):
    """A numeric input was NaN or infinite."""


class NonFiniteValue(PanfuseError):
    """A value read from a file was NaN or infinite."""


class BadMagic(PanfuseError):
    """A binary file has wrong magic bytes, version, or a truncated payload."""


class MalformedSidecar(PanfuseError):
    """A panoptic PNG and its JSON sidecar disagree."""


class IdOverflow(PanfuseError):
    """More segments than a 24-bit RGB encoding can represent."""


class UnknownClassId(PanfuseError):
    """A file references a class id that violates taxonomy constraints."""


class SpecTooLarge(PanfuseError):
    """A synthetic scene spec asks for more instances than representable."""


class MissingInput(PanfuseError):
    """A manifest lacks an input the requested operation needs."""
