"""Exception types. CLI exit codes key off these classes."""


class PatchforgeError(Exception):
    """Base class for all package errors."""


class DataError(PatchforgeError, ValueError):
    """Input data is malformed or inconsistent (CLI exit code 3)."""


class RasterFormatError(DataError):
    pass


class BadMagicError(RasterFormatError):
    pass


class TruncatedPayloadError(RasterFormatError):
    pass


class UnsupportedDtypeError(RasterFormatError):
    pass


class WindowError(DataError):
    """A window falls outside a raster where padding is not allowed."""


class GeometryError(DataError):
    """Degenerate geometry, or rejection sampling gave up on a sliver."""


class SamplingError(DataError):
    pass


class ConfigError(PatchforgeError):
    """Run configuration failed validation (CLI exit code 2).

    ``problems`` lists every issue found, not only the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
