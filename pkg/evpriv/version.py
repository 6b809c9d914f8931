from importlib import metadata

__all__ = ["__version__", "version", "version_info"]

try:
    __version__ = metadata.version("evpriv")  # type: str
except metadata.PackageNotFoundError:
    __version__ = "0.1.0"

version = __version__
version_info = tuple(int(x) for x in __version__.split(".") if x.isdigit())
