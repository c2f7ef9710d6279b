"""Bucket frames on the data connection.

    u32 frame_len | u32 tuple_count | (u32 len | bytes) * tuple_count

All integers little-endian; ``frame_len`` counts the bytes after itself.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_U32 = struct.Struct("<I")
MAX_FRAME = 64 * 1024 * 1024


class BucketError(ValueError):
    pass


def encode_bucket(tuples) -> bytes:
    """Serialize a bucket including its length prefix."""
    parts = [b""]
    for t in tuples:
        parts.append(_U32.pack(len(t)))
        parts.append(t)
    parts[0] = _U32.pack(len(tuples))
    body = b"".join(parts)
    return _U32.pack(len(body)) + body


def encode_uniform_bucket(payload: bytes, count: int) -> bytes:
    """``count`` copies of one pre-serialized tuple."""
    body = _U32.pack(count) + (_U32.pack(len(payload)) + payload) * count
    return _U32.pack(len(body)) + body


def decode_bucket(body, max_tuples: int | None = None) -> list[bytes]:
    """Split a frame body (without the length prefix) into tuple payloads."""
    if len(body) < 4:
        raise BucketError("frame shorter than its tuple count")
    (count,) = _U32.unpack_from(body, 0)
    if max_tuples is not None and count > max_tuples:
        raise BucketError(f"bucket of {count} tuples exceeds limit {max_tuples}")
    if count == 0:
        if len(body) != 4:
            raise BucketError("trailing bytes after empty bucket")
        return []
    # fixed-size tuples: one vectorised view instead of a Python loop
    if len(body) >= 8:
        (first,) = _U32.unpack_from(body, 4)
        if len(body) - 4 == count * (4 + first):
            rec = np.dtype([("len", "<u4"), ("data", f"V{first}")]) if first else np.dtype([("len", "<u4")])
            arr = np.frombuffer(body, dtype=rec, offset=4)
            if np.all(arr["len"] == first):
                return arr["data"].tolist() if first else [b""] * count
    out = []
    pos = 4
    n = len(body)
    for _ in range(count):
        if pos + 4 > n:
            raise BucketError("truncated tuple length")
        (ln,) = _U32.unpack_from(body, pos)
        pos += 4
        if pos + ln > n:
            raise BucketError("truncated tuple payload")
        out.append(bytes(body[pos : pos + ln]))
        pos += ln
    if pos != n:
        raise BucketError(f"{n - pos} trailing bytes in bucket")
    return out


def costed_decode(tuples: list[bytes], work: int) -> int:
    """Stand-in for object deserialization: ``work`` checksum passes per tuple."""
    crc = 0
    if work:
        for t in tuples:
            for _ in range(work):
                crc = zlib.crc32(t, crc)
    return crc


def sequence_payload(i: int, size: int = 16) -> bytes:
    """Tuple whose first 8 bytes carry its sequence number."""
    return i.to_bytes(8, "little") + bytes(max(0, size - 8))


def payload_sequence(p: bytes) -> int:
    return int.from_bytes(p[:8], "little")
