"""Exception hierarchy.

Every error raised by the toolkit belongs to exactly one family. Each family
carries the process exit code the CLI uses when the error escapes a command.
Code 2 is left to argparse usage errors and 1 to unexpected failures.
"""


class FaciesError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class DataIOError(FaciesError):
    """A file could not be opened, read or written, or is structurally truncated."""

    exit_code = 4


class ConfigError(FaciesError, ValueError):
    """Invalid command-line or configuration-file parameters."""

    exit_code = 3


# --- segy -----------------------------------------------------------------


class SegyError(FaciesError):
    exit_code = 10


class UnsupportedFormatCode(SegyError):
    def __init__(self, code):
        super().__init__(f"unsupported SEG-Y data format code {code} (supported: 1, 5)")
        self.code = code


class TruncatedHeader(SegyError):
    pass


class InvalidHeader(SegyError):
    pass


class TruncatedTrace(SegyError):
    pass


class VariableTraceLength(SegyError):
    pass


class NonRectilinearGeometry(SegyError):
    def __init__(self, message, missing=(), duplicated=()):
        super().__init__(message)
        self.missing = list(missing)
        self.duplicated = list(duplicated)


class InvalidSpec(SegyError, ValueError):
    pass


class InvalidVolume(SegyError, ValueError):
    pass


# --- attributes -----------------------------------------------------------


class AttributeComputationError(FaciesError):
    """Attribute computation failure; ``trace`` holds (inline, crossline) when known."""

    exit_code = 11

    def __init__(self, message, trace=None):
        if trace is not None:
            message = f"{message} at trace (inline={trace[0]}, crossline={trace[1]})"
        super().__init__(message)
        self.trace = trace


class TraceTooShort(AttributeComputationError):
    pass


class WindowTooLarge(AttributeComputationError):
    pass


class InvalidWindow(AttributeComputationError, ValueError):
    pass


# --- store ----------------------------------------------------------------


class StoreError(FaciesError):
    exit_code = 12


class GeometryMismatch(StoreError):
    pass


class EmptyMatrix(StoreError):
    pass


class StatsMismatch(StoreError):
    pass


class ChecksumError(StoreError):
    pass


class ChunkOutOfRange(StoreError, IndexError):
    pass


class ManifestError(StoreError):
    pass


# --- kmeans ---------------------------------------------------------------


class KMeansError(FaciesError):
    exit_code = 13


class DimensionMismatch(KMeansError, ValueError):
    pass


class TooFewDistinctRows(KMeansError):
    pass


class InvalidConfig(KMeansError, ValueError):
    pass


# --- export ---------------------------------------------------------------


class ExportError(FaciesError):
    exit_code = 14


class CountMismatch(ExportError):
    pass


class LabelOutOfRange(ExportError):
    pass


class IndexOutOfRange(ExportError, IndexError):
    pass


class PaletteTooSmall(ExportError):
    pass


class VersionMismatch(ExportError):
    pass


FAMILIES = (
    DataIOError,
    ConfigError,
    SegyError,
    AttributeComputationError,
    StoreError,
    KMeansError,
    ExportError,
)


def exit_code_for(exc):
    """Exit code of the family ``exc`` belongs to (1 for anything unexpected)."""
    for family in FAMILIES:
        if isinstance(exc, family):
            return family.exit_code
    return 1
