"""Block hand-off: logging thread -> K compression workers -> one writer.

Both hand-offs are FIFO queues. Workers may finish out of order, so the
writer puts each sink's frames back into submission order using the block
sequence number before writing.
"""

from __future__ import annotations

import logging
import os
import queue
import threading

from .codecs import compress
from .sinkfile import SinkHeader, encode_frame, records_to_bytes
from .spec import Codec

log = logging.getLogger(__name__)

_STOP = object()


class SinkWriteError(OSError):
    def __init__(self, path, unpersisted: int, cause: BaseException | None):
        super().__init__(f"{path}: {unpersisted} records not persisted ({cause})")
        self.path = path
        self.unpersisted = unpersisted
        self.cause = cause


class SinkWriter:
    """An open sink file plus its per-block bookkeeping."""

    def __init__(self, path, header: SinkHeader):
        self.path = os.fspath(path)
        self.header = header
        self.width = header.width
        self.fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        self._cond = threading.Condition()
        self._submitted = 0  # next block seq
        self._next_write = 0
        self._pending: dict[int, tuple[bytes, int]] = {}
        self.records_written = 0
        self.unpersisted = 0
        self.error: BaseException | None = None
        self.closed = False
        try:
            self.write_all(header.encode())
        except OSError:
            os.close(self.fd)
            raise

    def write_all(self, data) -> None:
        view = memoryview(data)
        while view:
            n = os.write(self.fd, view)
            view = view[n:]

    def next_seq(self) -> int:
        with self._cond:
            seq = self._submitted
            self._submitted += 1
            return seq

    def deliver(self, seq: int, frame: bytes | None, nrec: int) -> None:
        """Writer side: accept a compressed block and write everything now in order."""
        with self._cond:
            self._pending[seq] = (frame, nrec)
            while self._next_write in self._pending:
                frame, nrec = self._pending.pop(self._next_write)
                self._next_write += 1
                if frame is None or self.error is not None:
                    self.unpersisted += nrec
                    continue
                try:
                    self.write_all(frame)
                    self.records_written += nrec
                except OSError as exc:
                    self.error = exc
                    self.unpersisted += nrec
            self._cond.notify_all()

    def wait_drained(self, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: self._next_write >= self._submitted, timeout)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        os.close(self.fd)


class Pipeline:
    """Process-wide compression worker pool and writer thread."""

    def __init__(self, workers: int = 2, depth: int | None = None):
        if workers < 1:
            raise ValueError("need at least one compression worker")
        self.workers = workers
        # bounded so a fast logger blocks instead of queueing unbounded memory
        self._work: queue.Queue = queue.Queue(maxsize=depth or 2 * workers)
        self._done: queue.Queue = queue.Queue()
        self._threads = [
            threading.Thread(target=self._compress_loop, name=f"cplg-compress-{i}", daemon=True) for i in range(workers)
        ]
        self._threads.append(threading.Thread(target=self._write_loop, name="cplg-writer", daemon=True))
        for t in self._threads:
            t.start()
        self.stopped = False

    def submit(self, sink: SinkWriter, codec: Codec, words) -> None:
        nrec = len(words) // sink.width
        if nrec == 0:
            return
        self._work.put((sink, sink.next_seq(), codec, words, nrec))

    def _compress_loop(self) -> None:
        while True:
            item = self._work.get()
            if item is _STOP:
                return
            sink, seq, codec, words, nrec = item
            try:
                raw = records_to_bytes(words)
                frame = encode_frame(compress(codec, raw), len(raw))
            except Exception:  # keep the worker alive; the block is reported lost
                log.exception("compression failed for %s block %d", sink.path, seq)
                frame = None
            self._done.put((sink, seq, frame, nrec))

    def _write_loop(self) -> None:
        while True:
            item = self._done.get()
            if item is _STOP:
                return
            sink, seq, frame, nrec = item
            sink.deliver(seq, frame, nrec)

    def stop(self) -> None:
        if self.stopped:
            return
        self.stopped = True
        for _ in range(self.workers):
            self._work.put(_STOP)
        for t in self._threads[:-1]:
            t.join()
        self._done.put(_STOP)
        self._threads[-1].join()
