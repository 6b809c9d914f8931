import logging
from zlib import crc32

from evpriv import exceptions
from evpriv._codec.convert import format_names

_logger = logging.getLogger(__name__)


def check_magic(found: bytes, expected: bytes) -> None:
    """
    Raises:
         exceptions.FormatError: if the leading bytes of a file are not the expected magic.
    """
    if found != expected:
        name = format_names.get(expected, expected.decode(errors='replace'))
        msg = f"invalid file magic {found!r}, expected {expected!r} ({name})"
        _logger.error(msg)
        raise exceptions.FormatError(msg)


def check_length(data: bytes, needed: int, what: str) -> None:
    """
    Raises:
         exceptions.FormatError: if a buffer is shorter than the layout requires.
    """
    if len(data) < needed:
        msg = f"truncated {what}: need {needed} bytes, got {len(data)}"
        _logger.error(msg)
        raise exceptions.FormatError(msg)


def check_crc(body: bytes, expected: int) -> None:
    """
    Raises:
         exceptions.ProtocolError: if the CRC32 (ISO-HDLC) of body does not match.
    """
    found = crc32(body) & 0xFFFFFFFF
    if found != expected:
        msg = f"CRC mismatch: frame says {expected:08x}, payload gives {found:08x}"
        _logger.error(msg)
        raise exceptions.ProtocolError(msg)
