"""Channels, handlers and the process-wide profiler object.

Every handler turns into a plain closure ``log(tuple_id)``; the profiler keeps
them in a list indexed by channel id so :func:`log_ts` is one list lookup plus
one call. Closing a channel swaps its closure for one that only counts the
rejected call.

Termination: a signal handler installed by
:meth:`Profiler.install_termination_handler` closes every channel and exits.
Python runs signal handlers on the main thread between bytecodes, so code that
swaps blocks or edits the channel table marks itself critical; a signal landing
there is deferred until the section ends. A record whose ``log_ts`` call was cut
short is dropped at close, so the sink holds exactly the completed calls.
"""

from __future__ import annotations

import atexit
import functools
import json
import logging
import os
import signal
import struct
import sys
import threading
import time
from array import array
from dataclasses import asdict, dataclass
from typing import Callable

from .. import coretime
from .pipeline import Pipeline, SinkWriteError, SinkWriter
from .sinkfile import FRAME, PC_TOTAL, SinkHeader
from .spec import FROM_CONFIG_SERVER, Codec, DataFormat, HandlerKind, HandlerSpec

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1 << 20


class ChannelError(ValueError):
    pass


class NoDataError(LookupError):
    pass


@dataclass
class CloseReport:
    name: str
    handler: str
    committed: int  # records persisted in the sink
    unpersisted: int = 0
    rejected: int = 0
    unacked: int = 0
    error: str | None = None

    def line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _wall_clock() -> Callable[[], int]:
    return functools.partial(time.clock_gettime_ns, time.CLOCK_MONOTONIC_RAW)


class BlockBuffer:
    """Current block of one channel; full blocks go to the pipeline."""

    def __init__(self, prof: "Profiler", sink: SinkWriter, codec: Codec, capacity: int):
        self.prof = prof
        self.sink = sink
        self.codec = codec
        self.width = sink.width
        self.capacity = capacity
        self.buf = array("Q")
        self.closed = False

    def add(self, *words) -> None:
        """Slow path used off the logging thread (ReT acks, finishing records)."""
        self.buf.extend(words)
        if len(self.buf) >= self.capacity * self.width:
            self.prof._handoff(self)

    def logger(self, stamp: Callable, tsc: bool) -> Callable[[int], None]:
        buf_state = self
        cap = self.capacity
        handoff = self.prof._handoff
        ap = self.buf.append
        n = 0

        def repair():
            b = buf_state.buf
            del b[len(b) - len(b) % buf_state.width :]

        if tsc:

            def log(tuple_id):
                nonlocal n, ap
                s = stamp()
                try:
                    ap(s.wall_ns)
                    ap(s.cycles)
                    ap(tuple_id)
                except (OverflowError, TypeError):
                    repair()
                    raise
                n += 1
                if n >= cap:
                    n = 0
                    ap = handoff(buf_state)

        else:

            def log(tuple_id):
                nonlocal n, ap
                try:
                    ap(stamp())
                    ap(tuple_id)
                except (OverflowError, TypeError):
                    repair()
                    raise
                n += 1
                if n >= cap:
                    n = 0
                    ap = handoff(buf_state)

        return log

    def finish(self) -> None:
        b = self.buf
        del b[len(b) - len(b) % self.width :]
        self.buf = array("Q")
        self.closed = True
        if len(b):
            self.prof.pipeline.submit(self.sink, self.codec, b)


class Handler:
    kind: HandlerKind

    def __init__(self, ch: "Channel"):
        self.ch = ch

    def logger(self) -> Callable[[int], None]:
        raise NotImplementedError

    def finish(self) -> None:
        """Push everything still held in memory towards the sink."""

    def committed(self) -> int:
        return self.ch.sink.records_written

    def unacked(self) -> int:
        return 0


class NullHandler(Handler):
    kind = HandlerKind.NULL

    def logger(self):
        def log(tuple_id):
            return None

        return log


class IdHandler(Handler):
    """One unbuffered frame per call, written straight to the file."""

    kind = HandlerKind.ID

    def __init__(self, ch):
        super().__init__(ch)
        self.lost = 0

    def logger(self):
        fd = self.ch.sink.fd
        write = os.write
        stamp = self.ch.stamp
        handler = self
        if self.ch.data_format == DataFormat.TSC_PAIR:
            pk = struct.Struct("<IIQQQ").pack

            def log(tuple_id):
                s = stamp()
                rec = pk(24, 24, s.wall_ns, s.cycles, tuple_id)
                try:
                    write(fd, rec)
                except OSError:
                    handler.lost += 1

        else:
            pk = struct.Struct("<IIQQ").pack

            def log(tuple_id):
                rec = pk(16, 16, stamp(), tuple_id)
                try:
                    write(fd, rec)
                except OSError:
                    handler.lost += 1

        return log

    def committed(self) -> int:
        sink = self.ch.sink
        size = os.fstat(sink.fd).st_size - len(sink.header.encode())
        return size // (FRAME.size + 8 * sink.width)

    def finish(self):
        self.ch.sink.unpersisted += self.lost


class BufferedHandler(Handler):
    kind = HandlerKind.BUFFERED_ID

    def __init__(self, ch):
        super().__init__(ch)
        self.block = BlockBuffer(ch.prof, ch.sink, ch.spec.codec, ch.prof.capacity)

    def logger(self):
        return self.block.logger(self.ch.stamp, self.ch.data_format == DataFormat.TSC_PAIR)

    def finish(self):
        self.block.finish()


class DownsampleHandler(BufferedHandler):
    """Logs call 0, n, 2n, ... of this channel."""

    kind = HandlerKind.DOWNSAMPLE

    def logger(self):
        inner = super().logger()
        n = self.ch.spec.params[0]
        calls = 0

        def log(tuple_id):
            nonlocal calls
            c = calls
            calls = c + 1
            if c % n == 0:
                inner(tuple_id)

        return log


class XoYHandler(BufferedHandler):
    """Logs tuples whose id satisfies ``id mod y < x``."""

    kind = HandlerKind.XOY

    def logger(self):
        inner = super().logger()
        x, y = self.ch.spec.params

        def log(tuple_id):
            if tuple_id % y < x:
                inner(tuple_id)

        return log


class FirstLastHandler(Handler):
    kind = HandlerKind.FIRST_LAST

    def __init__(self, ch):
        super().__init__(ch)
        self.first = None
        self.last = None

    def logger(self):
        stamp = self.ch.stamp
        h = self
        if self.ch.data_format == DataFormat.TSC_PAIR:

            def log(tuple_id):
                s = stamp()
                rec = (s.wall_ns, s.cycles, tuple_id)
                if h.first is None:
                    h.first = h.last = rec
                elif rec[0] < h.first[0]:
                    h.first = rec
                elif rec[0] >= h.last[0]:
                    h.last = rec

        else:

            def log(tuple_id):
                rec = (stamp(), tuple_id)
                if h.first is None:
                    h.first = h.last = rec
                elif rec[0] < h.first[0]:
                    h.first = rec
                elif rec[0] >= h.last[0]:
                    h.last = rec

        return log

    def result(self):
        if self.first is None:
            raise NoDataError(f"channel {self.ch.name!r} has no records")
        return self.first, self.last

    def finish(self):
        if self.first is not None:
            self.ch.prof.pipeline.submit(self.ch.sink, Codec.RAW, array("Q", self.first + self.last))


class CounterHandler(Handler):
    """Periodic counter. SPC: one writer, plain increments. MPC: locked increments.

    A sampler thread records the count of each elapsed period as the difference
    of two snapshots of the running total, so the periods always sum to it.
    """

    def __init__(self, ch, multi: bool):
        super().__init__(ch)
        self.kind = HandlerKind.MPC if multi else HandlerKind.SPC
        self.multi = multi
        self.period = float(ch.spec.params[0])
        self.total = 0
        self.periods: list[tuple[int, int]] = []
        self._last = 0
        self._sample_lock = threading.Lock()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=f"cplg-pc-{ch.name}", daemon=True)
        self._thread.start()

    def logger(self):
        h = self
        if self.multi:
            lock = self._lock

            def log(tuple_id):
                with lock:
                    h.total += 1

        else:

            def log(tuple_id):
                h.total += 1

        return log

    def _run(self):
        while not self._stop.wait(self.period):
            self.sample()

    def sample(self) -> tuple[int, int]:
        """Close the current period now."""
        with self._sample_lock:
            t = self.total
            rec = (len(self.periods), t - self._last)
            self._last = t
            self.periods.append(rec)
            return rec

    def finish(self):
        self._stop.set()
        self._thread.join()
        if self.total != self._last or not self.periods:
            self.sample()
        words = array("Q")
        for rec in self.periods:
            words.extend(rec)
        words.extend((PC_TOTAL, self.total))
        self.ch.prof.pipeline.submit(self.ch.sink, Codec.RAW, words)


class RetStartHandler(Handler):
    """Records T1 per tuple; an acknowledgment for that tuple records T3."""

    kind = HandlerKind.RET_START

    def __init__(self, ch):
        super().__init__(ch)
        if ch.data_format == DataFormat.TSC_PAIR:
            raise ChannelError("ReT channels take wall_ns or raw_ticks")
        self.block = BlockBuffer(ch.prof, ch.sink, Codec.RAW, ch.prof.capacity)
        self.pending: dict[int, int] = {}
        self.max_rtt = 0
        self.acked = 0
        self.stray = 0
        self.server = None
        bind = ch.spec.params[0] if ch.spec.params else ""
        if bind and bind.lower() != "none":
            from .ret import RetAckServer

            self.server = RetAckServer(bind, self.acknowledge)

    @property
    def addr(self) -> str | None:
        return self.server.addr if self.server else None

    def logger(self):
        pending = self.pending
        stamp = self.ch.stamp

        def log(tuple_id):
            pending[tuple_id] = stamp()

        return log

    def acknowledge(self, tuple_id: int) -> None:
        t3 = self.ch.stamp()
        t1 = self.pending.pop(tuple_id, None)
        if t1 is None or self.block.closed:
            self.stray += 1
            return
        rtt = t3 - t1
        if rtt > self.max_rtt:
            self.max_rtt = rtt
        self.acked += 1
        self.block.add(tuple_id, t1, t3)

    def finish(self):
        if self.server is not None:
            self.server.close()
        self.block.finish()

    def unacked(self) -> int:
        return len(self.pending)


class RetEndHandler(Handler):
    kind = HandlerKind.RET_END

    def __init__(self, ch, sender=None):
        super().__init__(ch)
        self.client = None
        if sender is None:
            target = ch.spec.params[0] if ch.spec.params else ""
            if not target:
                raise ChannelError("ReTEnd needs the start node address or an ack sender")
            from .ret import RetAckClient

            self.client = RetAckClient(target)
            sender = self.client.send
        self.sender = sender

    def logger(self):
        return self.sender

    def finish(self):
        if self.client is not None:
            self.client.close()


_HANDLERS = {
    HandlerKind.NULL: NullHandler,
    HandlerKind.ID: IdHandler,
    HandlerKind.BUFFERED_ID: BufferedHandler,
    HandlerKind.DOWNSAMPLE: DownsampleHandler,
    HandlerKind.XOY: XoYHandler,
    HandlerKind.FIRST_LAST: FirstLastHandler,
    HandlerKind.RET_START: RetStartHandler,
}


class Channel:
    def __init__(self, prof, cid, name, data_format, spec, sink_path, clock=None, ack_sender=None):
        self.prof = prof
        self.id = cid
        self.name = name
        self.data_format = data_format
        self.spec = spec
        self.sink_path = sink_path
        self.state = "open"
        self.rejected = 0
        self.report: CloseReport | None = None
        if clock is not None:
            self.stamp = clock
        elif data_format == DataFormat.WALL_NS:
            self.stamp = _wall_clock()
        elif data_format == DataFormat.RAW_TICKS:
            self.stamp = prof.source.read_cycles
        else:
            self.stamp = prof.source.sample
        header = SinkHeader(spec.codec, data_format, spec.kind, name)
        self.sink = SinkWriter(sink_path, header)
        try:
            kind = spec.kind
            if kind in (HandlerKind.SPC, HandlerKind.MPC):
                self.handler = CounterHandler(self, kind == HandlerKind.MPC)
            elif kind == HandlerKind.RET_END:
                self.handler = RetEndHandler(self, ack_sender)
            else:
                self.handler = _HANDLERS[kind](self)
            self.log_ts = self.handler.logger()
        except BaseException:
            self.sink.close()
            raise

    def _reject(self, tuple_id=None) -> None:
        self.rejected += 1

    @property
    def closed(self) -> bool:
        return self.state == "closed"

    def close(self) -> CloseReport:
        return self.prof.close_channel(self.id)


class Profiler:
    """Channel registry plus the shared compression pipeline."""

    def __init__(
        self,
        out_dir: str | os.PathLike = ".",
        workers: int = 2,
        capacity: int = DEFAULT_CAPACITY,
        config_server: str | None = None,
        source: coretime.CycleSource | None = None,
    ):
        if capacity < 1:
            raise ValueError("block capacity must be >= 1")
        self.out_dir = os.fspath(out_dir)
        self.workers = workers
        self.capacity = capacity
        self.config_server = config_server or os.environ.get("CLOUDPROF_CONFIG_SERVER")
        self.source = source or coretime.get_source()
        self.channels: list[Channel] = []
        self.loggers: list[Callable[[int], None]] = []
        self._names: dict[str, int] = {}
        self._pipeline: Pipeline | None = None
        self._lock = threading.RLock()
        self._main = threading.main_thread().ident
        self._critical = 0
        self._deferred: int | None = None
        self._exit_code = 0
        self._report_stream = None
        self._on_terminate = None
        self.reports: list[CloseReport] = []
        atexit.register(self._atexit)

    # -- signal-safe sections ------------------------------------------------
    def _enter(self) -> bool:
        if threading.get_ident() == self._main:
            self._critical += 1
            return True
        return False

    def _leave(self, entered: bool) -> None:
        if entered:
            self._critical -= 1
            if self._deferred is not None and not self._critical:
                signum, self._deferred = self._deferred, None
                self._terminate(signum)

    @property
    def pipeline(self) -> Pipeline:
        if self._pipeline is None:
            with self._lock:
                if self._pipeline is None:
                    self._pipeline = Pipeline(self.workers)
        return self._pipeline

    def _handoff(self, block: BlockBuffer):
        """Send a full block downstream; returns the append of the fresh block."""
        entered = self._enter()
        try:
            full = block.buf
            block.buf = array("Q")
            if not block.closed:
                self.pipeline.submit(block.sink, block.codec, full)
            return block.buf.append
        finally:
            self._leave(entered)

    # -- channel API -----------------------------------------------------------
    def open_channel(
        self,
        name: str,
        data_format="wall_ns",
        handler: HandlerSpec | str = FROM_CONFIG_SERVER,
        sink_path: str | os.PathLike | None = None,
        clock: Callable | None = None,
        ack_sender: Callable[[int], None] | None = None,
    ) -> int:
        fmt = DataFormat.parse(data_format)
        if isinstance(handler, str):
            if handler != FROM_CONFIG_SERVER:
                handler = HandlerSpec.parse(handler)
            else:
                if not self.config_server:
                    raise ChannelError("no configuration server configured")
                from .configserver import resolve_handler

                handler = resolve_handler(self.config_server, name)
        if sink_path is None:
            os.makedirs(self.out_dir, exist_ok=True)
            sink_path = os.path.join(self.out_dir, f"{name}.cplg")
        entered = self._enter()
        try:
            with self._lock:
                if name in self._names:
                    raise ChannelError(f"channel {name!r} already open")
                cid = len(self.channels)
                ch = Channel(self, cid, name, fmt, handler, sink_path, clock, ack_sender)
                self.channels.append(ch)
                self.loggers.append(ch.log_ts)
                self._names[name] = cid
            return cid
        finally:
            self._leave(entered)

    def channel(self, ch: int | str) -> Channel:
        if isinstance(ch, str):
            ch = self._names[ch]
        return self.channels[ch]

    def log_ts(self, ch: int, tuple_id: int) -> None:
        self.loggers[ch](tuple_id)

    def close_channel(self, ch: int | str) -> CloseReport:
        """Flush and finalize one channel. Raises SinkWriteError if records were lost to I/O."""
        c = self.channel(ch)
        entered = self._enter()
        try:
            with self._lock:
                if c.report is not None:
                    return c.report
                c.state = "closed"
                self.loggers[c.id] = c._reject
                c.log_ts = c._reject
                err = None
                try:
                    c.handler.finish()
                except OSError as exc:
                    err = exc
                if self._pipeline is not None:
                    c.sink.wait_drained()
                committed = c.handler.committed()
                c.sink.close()
                cause = err or c.sink.error
                c.report = CloseReport(
                    c.name,
                    c.spec.to_line(),
                    committed,
                    c.sink.unpersisted,
                    c.rejected,
                    c.handler.unacked(),
                    str(cause) if cause else None,
                )
                self.reports.append(c.report)
        finally:
            self._leave(entered)
        if c.report.unpersisted or cause is not None:
            raise SinkWriteError(c.sink_path, c.report.unpersisted, cause)
        return c.report

    def flush_all(self) -> list[CloseReport]:
        """Close every open channel; I/O failures are reported, not raised."""
        out = []
        for c in list(self.channels):
            try:
                out.append(self.close_channel(c.id))
            except SinkWriteError:
                out.append(c.report)
        return out

    def rejected(self, ch: int | str) -> int:
        return self.channel(ch).rejected

    def first_last_result(self, ch: int | str):
        h = self.channel(ch).handler
        if not isinstance(h, FirstLastHandler):
            raise ChannelError("channel does not use the FirstLast handler")
        return h.result()

    def periodic_counter_sample(self, ch: int | str) -> list[tuple[int, int]]:
        h = self.channel(ch).handler
        if not isinstance(h, CounterHandler):
            raise ChannelError("channel does not use a periodic counter handler")
        return list(h.periods)

    def shutdown(self) -> list[CloseReport]:
        reports = self.flush_all()
        if self._pipeline is not None:
            self._pipeline.stop()
        return reports

    # -- termination -------------------------------------------------------------
    def install_termination_handler(
        self,
        signals=(signal.SIGTERM,),
        exit_code: int = 0,
        report_stream=None,
        on_terminate: Callable[[list[CloseReport]], None] | None = None,
    ) -> None:
        """On any of ``signals``: close all channels, report counts, exit."""
        self._exit_code = exit_code
        self._report_stream = report_stream
        self._on_terminate = on_terminate
        for s in signals:
            signal.signal(s, self._on_signal)

    def _on_signal(self, signum, frame) -> None:
        if self._critical:
            self._deferred = signum
            return
        self._terminate(signum)

    def _terminate(self, signum: int) -> None:
        reports = self.flush_all()
        stream = self._report_stream or sys.stderr
        for r in reports:
            stream.write(f"cloudprof-close {r.line()}\n")
        stream.flush()
        if self._on_terminate is not None:
            self._on_terminate(reports)
        raise SystemExit(self._exit_code)

    def _atexit(self) -> None:
        try:
            self.flush_all()
        except Exception:  # interpreter is going away; nothing useful left to do
            log.exception("flush at exit failed")


# -- process-wide default ----------------------------------------------------------
_default: Profiler | None = None
_loggers: list = []


def configure(**kwargs) -> Profiler:
    """Create the process-wide profiler (replacing any previous one)."""
    global _default, _loggers
    if _default is not None:
        _default.shutdown()
    _default = Profiler(**kwargs)
    _loggers = _default.loggers
    return _default


def get_profiler() -> Profiler:
    return _default if _default is not None else configure()


def open_channel(name, data_format="wall_ns", handler=FROM_CONFIG_SERVER, **kw) -> int:
    return get_profiler().open_channel(name, data_format, handler, **kw)


def log_ts(ch: int, tuple_id: int) -> None:
    _loggers[ch](tuple_id)


def close_channel(ch) -> CloseReport:
    return get_profiler().close_channel(ch)


def flush_all_on_termination() -> list[CloseReport]:
    return get_profiler().flush_all()


def first_last_result(ch):
    return get_profiler().first_last_result(ch)


def periodic_counter_sample(ch):
    return get_profiler().periodic_counter_sample(ch)


def downsample_selects(n: int, call_index: int) -> bool:
    if n < 1:
        raise ValueError("n must be >= 1")
    return call_index % n == 0


def xoy_selects(x: int, y: int, tuple_id: int) -> bool:
    if not (y >= 1 and 0 <= x <= y):
        raise ValueError("need 0 <= x <= y and y >= 1")
    return tuple_id % y < x
