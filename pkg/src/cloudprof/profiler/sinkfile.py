"""Sink file layout.

Header: ``CPLG``, u8 version (1), u8 codec, u8 data_format, u8 handler_kind,
u32 name_len, name (UTF-8). Frames follow: u32 compressed_len, u32 raw_len,
payload. All integers little-endian. A raw payload is a run of records, each a
fixed number of little-endian u64 words.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass

import numpy as np

from .codecs import CodecError, decompress
from .spec import Codec, DataFormat, HandlerKind, record_columns, record_width

MAGIC = b"CPLG"
VERSION = 1
_HEAD = struct.Struct("<4sBBBBI")
FRAME = struct.Struct("<II")
# trailer record of periodic-counter sinks: (PC_TOTAL, grand total)
PC_TOTAL = 2**64 - 1


class SinkFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SinkHeader:
    codec: Codec
    data_format: DataFormat
    handler_kind: HandlerKind
    name: str
    version: int = VERSION

    def encode(self) -> bytes:
        name = self.name.encode()
        return _HEAD.pack(MAGIC, self.version, self.codec, self.data_format, self.handler_kind, len(name)) + name

    @property
    def width(self) -> int:
        return record_width(self.handler_kind, self.data_format)

    @property
    def columns(self) -> tuple[str, ...]:
        return record_columns(self.handler_kind, self.data_format)


def parse_header(data: bytes) -> tuple[SinkHeader, int]:
    if len(data) < _HEAD.size:
        raise SinkFormatError("file shorter than header")
    magic, version, codec, fmt, kind, name_len = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise SinkFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SinkFormatError(f"unsupported version {version}")
    end = _HEAD.size + name_len
    if len(data) < end:
        raise SinkFormatError("truncated channel name")
    try:
        hdr = SinkHeader(Codec(codec), DataFormat(fmt), HandlerKind(kind), data[_HEAD.size : end].decode(), version)
    except ValueError as exc:
        raise SinkFormatError(str(exc)) from exc
    return hdr, end


def encode_frame(payload: bytes, raw_len: int) -> bytes:
    return FRAME.pack(len(payload), raw_len) + payload


def records_to_bytes(words) -> bytes:
    """u64 words (array('Q') or ndarray) as little-endian bytes."""
    arr = np.asarray(words, dtype=np.uint64)
    if sys.byteorder != "little":
        arr = arr.byteswap()
    return arr.tobytes()


@dataclass
class Sink:
    header: SinkHeader
    records: np.ndarray  # shape (n, width), uint64
    frames: int
    truncated: bool = False

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self.header.columns.index(name)]

    def __len__(self) -> int:
        return len(self.records)


def decode_bytes(data: bytes, strict: bool = True) -> Sink:
    """Parse a whole sink image. With ``strict=False`` a torn last frame is ignored."""
    hdr, pos = parse_header(data)
    width = hdr.width
    chunks = []
    frames = 0
    truncated = False
    n = len(data)
    while pos < n:
        if pos + FRAME.size > n:
            truncated = True
            break
        clen, rlen = FRAME.unpack_from(data, pos)
        body = pos + FRAME.size
        if body + clen > n:
            truncated = True
            break
        try:
            raw = decompress(hdr.codec, data[body : body + clen], rlen)
        except CodecError as exc:
            raise SinkFormatError(f"frame {frames} at offset {pos}: {exc}") from exc
        if rlen % (8 * width):
            raise SinkFormatError(f"frame {frames} holds a partial record ({rlen} bytes)")
        chunks.append(np.frombuffer(raw, dtype="<u8"))
        frames += 1
        pos = body + clen
    if truncated and strict:
        raise SinkFormatError(f"torn frame at offset {pos}")
    words = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<u8")
    return Sink(hdr, words.astype(np.uint64, copy=False).reshape(-1, width), frames, truncated)


def read_sink(path, strict: bool = True) -> Sink:
    with open(path, "rb") as f:
        return decode_bytes(f.read(), strict)
