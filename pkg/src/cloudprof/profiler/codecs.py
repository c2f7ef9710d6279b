"""Block codecs: 0 raw, 1 Zstandard frames, 2 LZO1X-1.

Compressor objects are never shared between threads. Zstandard contexts live
in a thread-local; LZO compressors must be dropped on the thread that made
them, so one is built per block (cheap next to a 16 MiB block).
"""

from __future__ import annotations

import threading

import zstandard
from lzallright import LZOCompressor

from .spec import Codec


class CodecError(ValueError):
    pass


_local = threading.local()
ZSTD_LEVEL = 1


def _zstd_c():
    c = getattr(_local, "zc", None)
    if c is None:
        c = _local.zc = zstandard.ZstdCompressor(level=ZSTD_LEVEL)
    return c


def _zstd_d():
    d = getattr(_local, "zd", None)
    if d is None:
        d = _local.zd = zstandard.ZstdDecompressor()
    return d


def compress(codec: Codec | int, raw: bytes) -> bytes:
    if codec == Codec.RAW:
        return bytes(raw)
    if codec == Codec.ZSTD:
        return _zstd_c().compress(raw)
    if codec == Codec.LZO1X:
        return LZOCompressor().compress(bytes(raw)) if raw else b""
    raise CodecError(f"unknown codec {codec}")


def decompress(codec: Codec | int, payload: bytes, raw_len: int) -> bytes:
    if codec == Codec.RAW:
        out = bytes(payload)
    elif codec == Codec.ZSTD:
        try:
            out = _zstd_d().decompress(payload, max_output_size=raw_len)
        except zstandard.ZstdError as exc:
            raise CodecError(f"zstd: {exc}") from exc
    elif codec == Codec.LZO1X:
        if raw_len == 0:
            out = b""
        else:
            try:
                out = LZOCompressor.decompress(bytes(payload), output_size_hint=raw_len)
            except Exception as exc:  # lzallright raises its own error types
                raise CodecError(f"lzo1x: {exc}") from exc
    else:
        raise CodecError(f"unknown codec {codec}")
    if len(out) != raw_len:
        raise CodecError(f"decoded {len(out)} bytes, frame says {raw_len}")
    return out
