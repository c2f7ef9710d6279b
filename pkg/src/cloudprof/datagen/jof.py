"""Receiver with deserialization moved off the sink's path.

One receive thread per connection reads bucket frames, deserializes every
tuple, then pushes the bucket onto its own bounded queue (one producer, one
consumer). A single drainer visits the queues round-robin, taking one bucket
at a time and ingesting its tuples one by one. A full queue blocks its receive
thread, which stops reading the socket: backpressure reaches the sender.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from ..minrtt.wire import Frame, MsgType, json_frame, parse_addr, read_frame, send_frame
from .wire import MAX_FRAME, BucketError, costed_decode, decode_bucket

log = logging.getLogger(__name__)


@dataclass
class Bucket:
    thread: int
    tuples: list


def sink_drain(queues: Sequence[queue.Queue], consume: Callable | None = None) -> int:
    """Drain until every queue is empty; one bucket per queue per pass."""
    ingested = 0
    busy = True
    while busy:
        busy = False
        for q in queues:
            try:
                b = q.get_nowait()
            except queue.Empty:
                continue
            busy = True
            for t in b.tuples:
                if consume is not None:
                    consume(t)
                ingested += 1
    return ingested


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:])
        if k == 0:
            if got == 0:
                return None
            raise BucketError("connection closed mid-frame")
        got += k
    return buf


class Receiver:
    def __init__(
        self,
        bind: str | tuple[str, int] = "127.0.0.1:0",
        threads: int = 1,
        queue_cap: int = 64,
        max_bucket: int | None = None,
        work: int = 0,
        consume: Callable | None = None,
    ):
        if isinstance(bind, str):
            bind = parse_addr(bind)
        self.expected_threads = threads
        self.queue_cap = queue_cap
        self.max_bucket = max_bucket
        self.work = work
        self.consume = consume
        self._listener = socket.create_server(bind, backlog=max(8, threads))
        self._listener.settimeout(0.1)
        self.address = self._listener.getsockname()[:2]
        self.queues: list[queue.Queue] = []
        self._avail = threading.Semaphore(0)
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self.reset()

    @property
    def addr(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def reset(self) -> None:
        with self._lock:
            self.buckets = 0
            self.deserialized = 0
            self.ingested = 0
            self.malformed = 0
            self.stalls = 0
            self.connections = 0

    def counts(self) -> dict:
        return {
            "buckets": self.buckets,
            "deserialized": self.deserialized,
            "ingested": self.ingested,
            "malformed": self.malformed,
            "stalls": self.stalls,
            "connections": self.connections,
        }

    def start(self) -> "Receiver":
        for target, name in ((self._accept_loop, "jof-accept"), (self._drain_loop, "jof-sink")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            with self._lock:
                idx = len(self.queues)
                q: queue.Queue = queue.Queue(maxsize=self.queue_cap)
                self.queues.append(q)
                self.connections += 1
            t = threading.Thread(target=self._recv_loop, args=(conn, idx, q), name=f"jof-recv-{idx}", daemon=True)
            t.start()

    def _recv_loop(self, conn: socket.socket, idx: int, q: queue.Queue) -> None:
        with conn:
            while True:
                try:
                    head = _recv_exact(conn, 4)
                    if head is None:
                        return
                    n = int.from_bytes(head, "little")
                    if n > MAX_FRAME:
                        raise BucketError(f"frame of {n} bytes exceeds limit")
                    body = _recv_exact(conn, n)
                    if body is None:
                        raise BucketError("connection closed mid-frame")
                    tuples = decode_bucket(body, self.max_bucket)
                except BucketError as exc:
                    with self._lock:
                        self.malformed += 1
                    log.warning("connection %d: dropping partial bucket: %s", idx, exc)
                    return
                except OSError:
                    return
                costed_decode(tuples, self.work)
                with self._lock:
                    self.buckets += 1
                    self.deserialized += len(tuples)
                bucket = Bucket(idx, tuples)
                try:
                    q.put_nowait(bucket)
                except queue.Full:
                    with self._lock:
                        self.stalls += 1
                    q.put(bucket)
                self._avail.release()

    def _drain_loop(self) -> None:
        rr = 0
        consume = self.consume
        while not self._stop.is_set():
            if not self._avail.acquire(timeout=0.1):
                continue
            qs = self.queues
            nq = len(qs)
            for k in range(nq):
                i = (rr + k) % nq
                try:
                    b = qs[i].get_nowait()
                except queue.Empty:
                    continue
                rr = i + 1
                n = 0
                if consume is None:
                    for _ in b.tuples:
                        n += 1
                else:
                    for t in b.tuples:
                        consume(t)
                        n += 1
                self.ingested += n
                break

    def wait_ingested(self, target: int, timeout: float = 10.0, idle: float = 1.0) -> int:
        """Wait until ``target`` tuples are ingested, or ingestion stalls for ``idle`` s."""
        deadline = time.monotonic() + timeout
        last, last_change = self.ingested, time.monotonic()
        while self.ingested < target:
            now = time.monotonic()
            if now > deadline:
                break
            if self.ingested != last:
                last, last_change = self.ingested, now
            elif now - last_change > idle:
                break
            time.sleep(0.005)
        return self.ingested

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()
        for t in self._threads:
            t.join(2)


class _ControlHandler(socketserver.BaseRequestHandler):
    def handle(self):
        recv: Receiver = self.server.receiver
        while True:
            try:
                req = read_frame(self.request)
            except (OSError, ValueError):
                return
            body = json.loads(req.payload or b"{}")
            op = body.get("op", "counts")
            if op == "reset":
                recv.reset()
            elif op == "wait":
                recv.wait_ingested(int(body["sent"]), float(body.get("timeout", 10)), float(body.get("idle", 1)))
            reply = recv.counts()
            if "sent" in body:
                reply["sent"] = int(body["sent"])
                reply["dropped"] = reply["sent"] - reply["ingested"]
            send_frame(self.request, json_frame(MsgType.RESULT, req.seq, reply))


class ControlServer(socketserver.ThreadingTCPServer):
    """Counter exchange using the probe daemons' framing (RESULT messages)."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bind: str | tuple[str, int], receiver: Receiver):
        if isinstance(bind, str):
            bind = parse_addr(bind)
        self.receiver = receiver
        super().__init__(bind, _ControlHandler)

    @property
    def addr(self) -> str:
        return "%s:%d" % self.server_address[:2]

    def start(self) -> "ControlServer":
        threading.Thread(target=self.serve_forever, name="jof-control", daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def control_request(addr: str, op: str = "counts", timeout: float = 30.0, **fields) -> dict:
    with socket.create_connection(parse_addr(addr), timeout=timeout) as s:
        send_frame(s, json_frame(MsgType.RESULT, 1, {"op": op, **fields}))
        reply: Frame = read_frame(s)
    return reply.json()
