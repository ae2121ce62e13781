"""Exception hierarchy shared across the package."""


class DownscaleError(Exception):
    """Base class for all package errors."""


class ShapeError(DownscaleError, ValueError):
    pass


class InvalidStatsError(DownscaleError, ValueError):
    pass


class ConfigError(DownscaleError, ValueError):
    pass


class BoundsError(DownscaleError, ValueError):
    pass


class UndefinedMetricError(DownscaleError, ValueError):
    pass


class ProtocolError(DownscaleError):
    """A protocol spec leaks held-out data into training scope."""


class ParseError(DownscaleError):
    pass


class BadMagicError(ParseError):
    pass


class TruncatedPayloadError(ParseError):
    pass


class MissingSidecarError(ParseError):
    pass
