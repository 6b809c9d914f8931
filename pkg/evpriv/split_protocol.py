"""
Split inference over a byte stream.

The user keeps the frontal and rear network parts and the noise watermark; the provider
only holds the middle part. A reconstruction costs one activation tensor up (``ACT_UP``)
and one down (``ACT_DOWN``).

Frame layout, little-endian::

    magic "SPL1" | u8 version | u8 kind | u32 body length | body | u32 CRC32

The CRC (ISO-HDLC) covers everything before it. Tensor bodies are ``u32 C, H, W``
followed by ``C*H*W`` float32 values; ERROR bodies are ``u16`` category length, the
category and a UTF-8 message. Bodies longer than ``MAX_BODY`` are refused before they
are read.
"""
import enum
import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import BinaryIO, Optional, Tuple, Union
from zlib import crc32

import numpy as np

from evpriv import exceptions
from evpriv._codec.errors import check_crc
from evpriv.events import FrameImage, VoxelGrid
from evpriv.recon_net import ClientParts, Layers, NoiseWatermark, check_chain, infuse, run_layers

_logger = logging.getLogger(__name__)

MAGIC = b"SPL1"
VERSION = 1
DEFAULT_TIMEOUT = 10.0

_header = struct.Struct("<4sBBI")
_crc = struct.Struct("<I")
_tensor_header = struct.Struct("<III")
_channels = struct.Struct("<II")
_category_length = struct.Struct("<H")
_wire_float = np.dtype('<f4')

# largest tensor a frame may carry, and the largest body it may announce
MAX_TENSOR_VALUES = 1 << 24
MAX_BODY = _tensor_header.size + _wire_float.itemsize * MAX_TENSOR_VALUES


class Kind(enum.IntEnum):
    HELLO = 1
    ACT_UP = 2
    ACT_DOWN = 3
    ERROR = 4
    BYE = 5


_tensor_kinds = (Kind.ACT_UP, Kind.ACT_DOWN)

# ERROR frame categories
SHAPE = "shape"
PROTOCOL = "protocol"

Endpoint = Union[str, Tuple[str, int]]


@dataclass(frozen=True)
class WireMessage:
    """
    One protocol frame. ``tensor`` is set for ACT_UP and ACT_DOWN, ``channels`` for the
    server's HELLO, ``category``/``text`` for ERROR.
    """
    kind: Kind
    tensor: Optional[np.ndarray] = None
    channels: Optional[Tuple[int, int]] = None
    category: str = ""
    text: str = ""

    @classmethod
    def error(cls, category: str, text: str) -> 'WireMessage':
        return cls(Kind.ERROR, category=category, text=text)


def _protocol_error(msg: str) -> exceptions.ProtocolError:
    _logger.error(msg)
    return exceptions.ProtocolError(msg)


def _encode_body(message: WireMessage) -> bytes:
    if message.kind in _tensor_kinds:
        if message.tensor is None or message.tensor.ndim != 3:
            raise exceptions.InterfaceError(f"{message.kind.name} needs a CxHxW tensor")
        c, h, w = message.tensor.shape
        return _tensor_header.pack(c, h, w) + np.ascontiguousarray(message.tensor, dtype=_wire_float).tobytes()
    if message.kind == Kind.ERROR:
        category = message.category.encode()
        return _category_length.pack(len(category)) + category + message.text.encode()
    if message.kind == Kind.HELLO and message.channels is not None:
        return _channels.pack(*message.channels)
    return b""


def encode_message(message: WireMessage) -> bytes:
    body = _encode_body(message)
    if len(body) > MAX_BODY:
        raise exceptions.InterfaceError(f"{message.kind.name} body of {len(body)} bytes exceeds the {MAX_BODY} byte limit")
    head = _header.pack(MAGIC, VERSION, int(message.kind), len(body)) + body
    return head + _crc.pack(crc32(head) & 0xFFFFFFFF)


def _decode_body(kind: Kind, body: bytes) -> WireMessage:
    if kind in _tensor_kinds:
        if len(body) < _tensor_header.size:
            raise _protocol_error(f"{kind.name} body of {len(body)} bytes has no tensor header")
        c, h, w = _tensor_header.unpack_from(body)
        if len(body) != _tensor_header.size + 4 * c * h * w:
            raise _protocol_error(f"{kind.name} payload of {len(body) - _tensor_header.size} bytes does not hold a "
                                  f"{c}x{h}x{w} float32 tensor")
        tensor = np.frombuffer(body, dtype=_wire_float, offset=_tensor_header.size).reshape(c, h, w)
        return WireMessage(kind, tensor=tensor)
    if kind == Kind.ERROR:
        if len(body) < _category_length.size:
            raise _protocol_error("ERROR body is truncated")
        n, = _category_length.unpack_from(body)
        if len(body) < _category_length.size + n:
            raise _protocol_error("ERROR category is truncated")
        category = body[_category_length.size:_category_length.size + n].decode(errors='replace')
        text = body[_category_length.size + n:].decode(errors='replace')
        return WireMessage.error(category, text)
    if kind == Kind.HELLO:
        if len(body) == _channels.size:
            return WireMessage(kind, channels=_channels.unpack(body))
        if body:
            raise _protocol_error(f"HELLO body of {len(body)} bytes")
        return WireMessage(kind)
    if body:
        raise _protocol_error(f"{kind.name} frames carry no body, got {len(body)} bytes")
    return WireMessage(kind)


def _check_header(magic: bytes, version: int, kind: int, length: int) -> Kind:
    if magic != MAGIC:
        raise _protocol_error(f"invalid frame magic {magic!r}")
    if version != VERSION:
        raise _protocol_error(f"unsupported protocol version {version}")
    if length > MAX_BODY:
        raise _protocol_error(f"frame announces a {length} byte body, the limit is {MAX_BODY}")
    try:
        return Kind(kind)
    except ValueError:
        raise _protocol_error(f"unknown message kind {kind}") from None


def decode_message(frame: bytes) -> WireMessage:
    """
    Decode one complete frame.

    Raises:
        ProtocolError: on a bad header, a length mismatch or a CRC mismatch
    """
    if len(frame) < _header.size + _crc.size:
        raise _protocol_error(f"frame of {len(frame)} bytes is shorter than header and CRC")
    magic, version, kind, length = _header.unpack_from(frame)
    if len(frame) != _header.size + length + _crc.size:
        raise _protocol_error(f"frame of {len(frame)} bytes announces a {length} byte body")
    check_crc(frame[:-_crc.size], _crc.unpack_from(frame, len(frame) - _crc.size)[0])
    return _decode_body(_check_header(magic, version, kind, length), frame[_header.size:-_crc.size])


def _read_exactly(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if data is None or len(data) != n:
        raise EOFError(f"stream ended after {0 if data is None else len(data)} of {n} bytes")
    return data


def read_message(stream: BinaryIO) -> WireMessage:
    """
    Read one frame from a buffered binary stream.

    Raises:
        EOFError: if the stream ends before a frame starts or mid frame
        ProtocolError: for malformed frames
    """
    head = _read_exactly(stream, _header.size)
    magic, version, kind, length = _header.unpack(head)
    kind = _check_header(magic, version, kind, length)
    body = _read_exactly(stream, length)
    expected, = _crc.unpack(_read_exactly(stream, _crc.size))
    check_crc(head + body, expected)
    return _decode_body(kind, body)


def parse_endpoint(endpoint: Endpoint) -> Tuple[str, int]:
    """``host:port`` or a (host, port) tuple."""
    if isinstance(endpoint, tuple):
        return endpoint[0], int(endpoint[1])
    host, sep, port = endpoint.rpartition(':')
    if not sep or not port.isdigit():
        raise exceptions.ConfigError(f"endpoint '{endpoint}' is not of the form host:port")
    return host or '127.0.0.1', int(port)


class _SessionHandler(socketserver.StreamRequestHandler):
    server: 'MiddleServer'

    def setup(self):
        self.request.settimeout(self.server.session_timeout)
        super().setup()

    def _send(self, message: WireMessage) -> None:
        self.wfile.write(encode_message(message))
        self.wfile.flush()

    def handle(self):
        peer = self.client_address
        middle = self.server.middle
        _logger.info("session from %s opened", peer)
        while True:
            try:
                message = read_message(self.rfile)
            except exceptions.ProtocolError as e:
                try:
                    self._send(WireMessage.error(PROTOCOL, str(e)))
                except OSError:
                    _logger.info("session %s: peer left before the protocol error was sent", peer)
                break
            except (EOFError, OSError):
                break

            if message.kind == Kind.HELLO:
                self._send(WireMessage(Kind.HELLO, channels=(middle[0].c_in, middle[-1].c_out)))
            elif message.kind == Kind.ACT_UP:
                tensor = message.tensor
                if tensor.shape[0] != middle[0].c_in:
                    text = f"middle part expects {middle[0].c_in} channels, got {tensor.shape[0]}"
                    _logger.warning("session %s: %s", peer, text)
                    self._send(WireMessage.error(SHAPE, text))
                    continue
                self._send(WireMessage(Kind.ACT_DOWN, tensor=run_layers(middle, tensor)))
            elif message.kind == Kind.BYE:
                break
            else:
                self._send(WireMessage.error(PROTOCOL, f"unexpected {message.kind.name} from client"))
                break
        _logger.info("session from %s closed", peer)


class MiddleServer(socketserver.ThreadingTCPServer):
    """
    Serves the middle network part; one thread per session. The parameters are loaded
    once and never modified.
    """
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: Tuple[str, int], middle: Layers, session_timeout: float = DEFAULT_TIMEOUT):
        if not middle:
            raise exceptions.InterfaceError("the middle part needs at least one layer")
        check_chain(middle)
        self.middle = tuple(middle)
        self.session_timeout = session_timeout
        super().__init__(address, _SessionHandler)


class ServerHandle:
    """
    A running middle part server. Use it as a context manager or call close().
    """

    def __init__(self, server: MiddleServer):
        self.server: Optional[MiddleServer] = server
        self.address: Tuple[str, int] = server.server_address[:2]
        self._thread = threading.Thread(target=server.serve_forever, name="evpriv-serve", daemon=True)
        self._thread.start()
        _logger.info("serving the middle part on %s:%d", *self.address)

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def wait(self) -> None:
        """Block until the server stops."""
        self._thread.join()

    def close(self) -> None:
        if self.server:
            self.server.shutdown()
            self.server.server_close()
            self._thread.join()
            _logger.info("server on %s:%d stopped", *self.address)
            self.server = None


def serve(middle: Layers, endpoint: Endpoint = "127.0.0.1:0", session_timeout: float = DEFAULT_TIMEOUT
          ) -> ServerHandle:
    """
    Start serving F2 in a background thread. Port 0 picks a free port, see
    ``ServerHandle.address``.
    """
    return ServerHandle(MiddleServer(parse_endpoint(endpoint), middle, session_timeout))


def _raise_remote(message: WireMessage) -> None:
    msg = f"provider replied: {message.text}"
    _logger.error(msg)
    if message.category == SHAPE:
        raise exceptions.ShapeError(msg)
    raise exceptions.ProtocolError(msg)


class SplitClient:
    """
    A session with a middle part server.

    Args:
        endpoint: ``host:port`` of the server
        parts: the frontal and rear parts
        watermark: the secret noise added to every voxel grid before F1
        timeout: socket timeout in seconds
    """

    def __init__(self, endpoint: Endpoint, parts: ClientParts, watermark: NoiseWatermark,
                 timeout: float = DEFAULT_TIMEOUT):
        self.parts = parts
        self.watermark = watermark
        try:
            self.sock: Optional[socket.socket] = socket.create_connection(parse_endpoint(endpoint), timeout=timeout)
        except OSError as e:
            raise _protocol_error(f"cannot reach {endpoint}: {e}") from e
        self.stream = self.sock.makefile('rwb')
        reply = self._exchange(WireMessage(Kind.HELLO))
        if reply.kind != Kind.HELLO:
            self.close()
            raise _protocol_error(f"expected HELLO, got {reply.kind.name}")
        self.server_channels = reply.channels
        _logger.info("session with %s opened", endpoint)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def _check(self):
        if not self.sock:
            raise exceptions.InterfaceError("session is closed")

    def _exchange(self, message: WireMessage) -> WireMessage:
        self._check()
        try:
            self.stream.write(encode_message(message))
            self.stream.flush()
            reply = read_message(self.stream)
        except (OSError, EOFError) as e:
            raise _protocol_error(f"transport failure: {e}") from e
        if reply.kind == Kind.ERROR:
            _raise_remote(reply)
        return reply

    def reconstruct(self, grid: VoxelGrid) -> FrameImage:
        """
        ``F3(F2(F1(E + w)))`` with F2 evaluated by the provider.

        Raises:
            ShapeError: if the provider's middle part does not fit the local parts
            ProtocolError: on transport failures and ERROR replies
        """
        activation = run_layers(self.parts.frontal, infuse(grid, self.watermark).data)
        reply = self._exchange(WireMessage(Kind.ACT_UP, tensor=activation))
        if reply.kind != Kind.ACT_DOWN:
            raise _protocol_error(f"expected ACT_DOWN, got {reply.kind.name}")
        if reply.tensor.shape[0] != self.parts.rear[0].c_in:
            raise exceptions.ShapeError(f"rear part expects {self.parts.rear[0].c_in} channels, provider returned "
                                        f"{reply.tensor.shape[0]}")
        out = run_layers(self.parts.rear, reply.tensor)
        return FrameImage(out[0].astype(np.float64))

    def close(self) -> None:
        if self.sock:
            try:
                self.stream.write(encode_message(WireMessage(Kind.BYE)))
                self.stream.flush()
            except OSError:
                pass
            self.stream.close()
            self.sock.close()
            self.sock = None
            _logger.info("session closed")


def client_reconstruct(parts: ClientParts, watermark: NoiseWatermark, grid: VoxelGrid, endpoint: Endpoint,
                       timeout: float = DEFAULT_TIMEOUT) -> FrameImage:
    """Reconstruct one voxel grid in a session of its own."""
    with SplitClient(endpoint, parts, watermark, timeout) as client:
        return client.reconstruct(grid)
