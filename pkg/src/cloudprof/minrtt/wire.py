"""Length-prefixed frames shared by the probe daemons, ReT acks and datagen control.

Frame layout (big-endian)::

    u32 length      # bytes that follow: 1 + 4 + len(payload)
    u8  msg_type
    u32 seq
    payload
"""

from __future__ import annotations

import enum
import json
import socket
import struct
from dataclasses import dataclass

_HEAD = struct.Struct(">IBI")
_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")
MAX_FRAME = 16 * 1024 * 1024


class MsgType(enum.IntEnum):
    PROBE_REQ = 1
    PROBE_RESP = 2
    REGISTER = 3
    MEASURE_CMD = 4
    RESULT = 5
    RETACK = 6


class FrameError(ValueError):
    """Malformed or oversized frame."""


@dataclass(frozen=True)
class Frame:
    msg_type: int
    seq: int
    payload: bytes = b""

    def encode(self) -> bytes:
        return _HEAD.pack(5 + len(self.payload), self.msg_type, self.seq) + self.payload

    @property
    def cycles(self) -> int:
        """PROBE_RESP payload as an unsigned counter value."""
        if len(self.payload) != 8:
            raise FrameError(f"expected 8-byte counter payload, got {len(self.payload)}")
        return _U64.unpack(self.payload)[0]

    def json(self):
        return json.loads(self.payload.decode("utf-8"))


def probe_request(seq: int) -> Frame:
    return Frame(MsgType.PROBE_REQ, seq)


def probe_response(seq: int, cycles: int) -> Frame:
    return Frame(MsgType.PROBE_RESP, seq, _U64.pack(cycles))


def json_frame(msg_type: int, seq: int, obj) -> Frame:
    return Frame(msg_type, seq, json.dumps(obj, sort_keys=True).encode("utf-8"))


def u64_frame(msg_type: int, seq: int, value: int) -> Frame:
    return Frame(msg_type, seq, _U64.pack(value))


def decode_u64(payload: bytes) -> int:
    return _U64.unpack(payload)[0]


class FrameBuffer:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        out = []
        buf = self._buf
        while len(buf) >= 4:
            (length,) = _LEN.unpack_from(buf, 0)
            if length < 5 or length > MAX_FRAME:
                raise FrameError(f"bad frame length {length}")
            if len(buf) < 4 + length:
                break
            _, mt, seq = _HEAD.unpack_from(buf, 0)
            out.append(Frame(mt, seq, bytes(buf[9 : 4 + length])))
            del buf[: 4 + length]
        return out


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    (length,) = _LEN.unpack(_recv_exact(sock, 4))
    if length < 5 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    mt = body[0]
    (seq,) = struct.unpack_from(">I", body, 1)
    return Frame(mt, seq, body[5:])


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(frame.encode())


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port:
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def connect(addr: str | tuple[str, int], timeout: float | None = 5.0) -> socket.socket:
    if isinstance(addr, str):
        addr = parse_addr(addr)
    sock = socket.create_connection(addr, timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock
