"""Handler descriptions, data formats and their one-line text form."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class HandlerKind(enum.IntEnum):
    ID = 0
    BUFFERED_ID = 1
    DOWNSAMPLE = 2
    XOY = 3
    FIRST_LAST = 4
    SPC = 5
    MPC = 6
    RET_START = 7
    RET_END = 8
    NULL = 9


class DataFormat(enum.IntEnum):
    WALL_NS = 0
    RAW_TICKS = 1
    TSC_PAIR = 2

    @classmethod
    def parse(cls, value) -> "DataFormat":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


class Codec(enum.IntEnum):
    RAW = 0
    ZSTD = 1
    LZO1X = 2

    @classmethod
    def parse(cls, value) -> "Codec":
        if isinstance(value, str):
            if value.isdigit():
                return cls(int(value))
            return cls[value.upper()]
        return cls(value)


class SpecError(ValueError):
    pass


# marker for open_channel: ask the configuration server
FROM_CONFIG_SERVER = "FROM_CONFIG_SERVER"


@dataclass(frozen=True)
class HandlerSpec:
    """A handler kind with its parameters.

    ``params`` by kind: BUFFERED_ID (codec,), DOWNSAMPLE (n,), XOY (x, y),
    SPC/MPC (period_s,), RET_START (bind addr,), RET_END (start node addr,).
    """

    kind: HandlerKind
    params: tuple = ()

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == HandlerKind.DOWNSAMPLE and (len(p) != 1 or int(p[0]) < 1):
            raise SpecError(f"Downsample needs n >= 1, got {p}")
        if k == HandlerKind.XOY:
            if len(p) != 2:
                raise SpecError("XoY needs x and y")
            x, y = p
            if not (y >= 1 and 0 <= x <= y):
                raise SpecError(f"XoY needs 0 <= x <= y and y >= 1, got x={x} y={y}")
        if k in (HandlerKind.SPC, HandlerKind.MPC) and (len(p) != 1 or not p[0] > 0):
            raise SpecError(f"periodic counter needs period > 0, got {p}")
        if k == HandlerKind.BUFFERED_ID and len(p) != 1:
            raise SpecError("BufferedID needs a codec")

    # constructors
    @classmethod
    def id(cls):
        return cls(HandlerKind.ID)

    @classmethod
    def buffered_id(cls, codec="raw"):
        return cls(HandlerKind.BUFFERED_ID, (Codec.parse(codec),))

    @classmethod
    def downsample(cls, n: int):
        return cls(HandlerKind.DOWNSAMPLE, (int(n),))

    @classmethod
    def xoy(cls, x: int, y: int):
        return cls(HandlerKind.XOY, (int(x), int(y)))

    @classmethod
    def first_last(cls):
        return cls(HandlerKind.FIRST_LAST)

    @classmethod
    def spc(cls, period_s: float = 1.0):
        return cls(HandlerKind.SPC, (float(period_s),))

    @classmethod
    def mpc(cls, period_s: float = 1.0):
        return cls(HandlerKind.MPC, (float(period_s),))

    @classmethod
    def ret_start(cls, bind: str = "127.0.0.1:0"):
        return cls(HandlerKind.RET_START, (bind,))

    @classmethod
    def ret_end(cls, start_addr: str = ""):
        return cls(HandlerKind.RET_END, (start_addr,))

    @classmethod
    def null(cls):
        return cls(HandlerKind.NULL)

    @property
    def codec(self) -> Codec:
        return Codec(self.params[0]) if self.kind == HandlerKind.BUFFERED_ID else Codec.RAW

    def to_line(self) -> str:
        """``XOY 2 1024``, ``BUFFERED_ID ZSTD``, ``NULL`` ..."""
        parts = [self.kind.name]
        for p in self.params:
            parts.append(p.name if isinstance(p, Codec) else str(p))
        return " ".join(parts)

    @classmethod
    def parse(cls, line: str) -> "HandlerSpec":
        words = line.split()
        if not words:
            raise SpecError("empty handler description")
        try:
            kind = HandlerKind[words[0].upper()]
        except KeyError:
            raise SpecError(f"unknown handler kind {words[0]!r}") from None
        args = words[1:]
        try:
            if kind == HandlerKind.BUFFERED_ID:
                return cls.buffered_id(args[0] if args else "raw")
            if kind == HandlerKind.DOWNSAMPLE:
                (n,) = args
                return cls.downsample(int(n))
            if kind == HandlerKind.XOY:
                x, y = args
                return cls.xoy(int(x), int(y))
            if kind in (HandlerKind.SPC, HandlerKind.MPC):
                period = float(args[0]) if args else 1.0
                return cls(kind, (period,))
            if kind in (HandlerKind.RET_START, HandlerKind.RET_END):
                return cls(kind, (args[0],) if args else ())
        except (ValueError, KeyError, IndexError) as exc:
            raise SpecError(f"bad parameters in {line.strip()!r}: {exc}") from None
        if args:
            raise SpecError(f"{kind.name} takes no parameters")
        return cls(kind)


def record_width(kind: HandlerKind, fmt: DataFormat) -> int:
    """Number of u64 words per sink record."""
    if kind in (HandlerKind.SPC, HandlerKind.MPC):
        return 2  # period_index, count
    if kind == HandlerKind.RET_START:
        return 3  # tuple_id, t1, t3
    return 3 if fmt == DataFormat.TSC_PAIR else 2


def record_columns(kind: HandlerKind, fmt: DataFormat) -> tuple[str, ...]:
    if kind in (HandlerKind.SPC, HandlerKind.MPC):
        return ("period", "count")
    if kind == HandlerKind.RET_START:
        return ("tuple_id", "t1", "t3")
    if fmt == DataFormat.TSC_PAIR:
        return ("wall_ns", "ticks", "tuple_id")
    return ("wall_ns" if fmt == DataFormat.WALL_NS else "ticks", "tuple_id")
