"""
evpriv specific exceptions

Every exception carries the command line exit code and the one-word error category the
CLI prints for it.
"""

StandardError = Exception


class Warning(StandardError):
    """Exception raised for important warnings, for example a filter window that is larger
    than the grid it is applied to. It is not a subclass of Error."""
    pass


class Error(StandardError):
    """Exception that is the base class of all other evpriv error exceptions. You can use
    this to catch all errors with one single 'except' statement. Warnings are not
    considered errors and thus should not use this class as base."""
    exit_code = 4
    category = "runtime"


class InterfaceError(Error):
    """Exception raised for errors that are related to the way the API is used rather
    than to the data flowing through it, e.g. calling a closed session."""
    exit_code = 2
    category = "usage"


class ConfigError(InterfaceError):
    """Exception raised for configuration violations: unknown keys in a config file,
    unknown subcommands or out of range parameters."""
    pass


class DataError(Error):
    """Exception raised for errors that are due to problems with the processed data."""
    pass


class FormatError(DataError):
    """Exception raised when a file or record does not conform to its declared format:
    wrong magic, malformed CSV line, truncated payload or out of bounds coordinates."""
    exit_code = 3
    category = "format"


class ShapeError(DataError):
    """Exception raised when tensors that have to agree in shape do not."""
    pass


class IdenticalImagesError(DataError):
    """Exception raised when a PSNR is requested for two identical images. The value is
    infinite, which callers usually want to report rather than compute with."""
    pass


class OperationalError(Error):
    """Exception raised for errors that are related to the operation of an algorithm and
    not necessarily under the control of the programmer, e.g. RANSAC not finding a
    hypothesis or an empty training set."""
    pass


class ProtocolError(Error):
    """Exception raised for split inference protocol failures: CRC mismatches, unexpected
    message kinds, ERROR replies and broken transports."""
    exit_code = 5
    category = "protocol"
