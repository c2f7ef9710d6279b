"""Rate-controlled sender.

Each send slot has a due time ``t_next``; the loop spins on the clock until
``now >= t_next - budget`` and sends. Reaching a slot after ``t_next`` counts
as a deadline miss. The run still sends every tuple.
"""

from __future__ import annotations

import socket
import threading
import time
from array import array
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..minrtt.wire import parse_addr
from .wire import encode_bucket, encode_uniform_bucket, sequence_payload

DEFAULT_PAYLOAD = bytes(range(48))


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class EmissionPlan:
    rate: float  # tuples per second, all threads together
    duration: float  # seconds
    budget_ns: float | None = None  # window before each due time; default one send slot
    threads: int = 1
    payload: bytes = DEFAULT_PAYLOAD
    bucket: int = 1  # tuples per send

    def __post_init__(self):
        if self.rate < 0 or self.duration <= 0:
            raise PlanError("need rate >= 0 and duration > 0")
        if self.threads < 1 or self.bucket < 1:
            raise PlanError("threads and bucket must be >= 1")
        total = self.rate * self.duration
        if abs(total - round(total)) > 1e-6 * max(1.0, total):
            raise PlanError(f"rate x duration = {total} is not a whole number of tuples")
        if self.budget_ns is not None and self.budget_ns <= 0:
            raise PlanError("budget must be positive")

    @property
    def total(self) -> int:
        return int(round(self.rate * self.duration))

    def per_thread(self) -> list[int]:
        q, r = divmod(self.total, self.threads)
        return [q + (1 if i < r else 0) for i in range(self.threads)]

    def slot_ns(self, count: int) -> float:
        """Time between due times of one thread's sends."""
        return self.duration * 1e9 / count * self.bucket if count else 0.0

    def budget_for(self, count: int) -> float:
        return self.budget_ns if self.budget_ns is not None else self.slot_ns(count)

    def check_overhead(self, overhead_ns: float) -> None:
        """The budget must cover one send, or the rate is unreachable by construction."""
        for c in self.per_thread():
            if c and self.budget_for(c) < overhead_ns:
                raise PlanError(f"budget {self.budget_for(c):.0f} ns below send overhead {overhead_ns:.0f} ns")


@dataclass
class EmitStats:
    tuples: int = 0
    sends: int = 0
    misses: int = 0
    max_late_ns: int = 0
    start_ns: int = 0
    end_ns: int = 0
    send_times: array | None = None

    @property
    def elapsed_s(self) -> float:
        return (self.end_ns - self.start_ns) / 1e9

    @property
    def achieved_rate(self) -> float:
        return self.tuples / self.elapsed_s if self.end_ns > self.start_ns else 0.0


class NullTransport:
    """Discards every frame (measures the loop itself)."""

    def __init__(self):
        self.frames = 0

    def send(self, data) -> None:
        pass

    def close(self) -> None:
        pass


class CountingTransport(NullTransport):
    def send(self, data) -> None:
        self.frames += 1


class TcpTransport:
    def __init__(self, addr: str | tuple[str, int]):
        if isinstance(addr, str):
            addr = parse_addr(addr)
        self.sock = socket.create_connection(addr)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.send = self.sock.sendall

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self.sock.close()


def build_frames(
    count: int, bucket: int, payload: bytes | Callable[[int], bytes], first: int = 0
) -> tuple[list[bytes], list[int]]:
    """Pre-serialize every send of one thread before the clock starts.

    Returns the frames and the tuple count of each. A fixed payload shares one
    frame object between all full buckets.
    """
    if count == 0:
        return [], []
    full, rest = divmod(count, bucket)
    sizes = [bucket] * full + ([rest] if rest else [])
    if isinstance(payload, (bytes, bytearray)):
        frames = [encode_uniform_bucket(payload, bucket)] * full
        if rest:
            frames.append(encode_uniform_bucket(payload, rest))
        return frames, sizes
    frames = []
    lo = first
    for n in sizes:
        frames.append(encode_bucket([payload(i) for i in range(lo, lo + n)]))
        lo += n
    return frames, sizes


def emission_loop(
    frames: Sequence[bytes],
    sizes: Sequence[int],
    duration_s: float,
    budget_ns: float,
    send: Callable[[bytes], None],
    clock: Callable[[], int] = time.perf_counter_ns,
    record: bool = False,
    yield_ns: int = 0,
) -> EmitStats:
    """Send ``frames`` (``sizes[k]`` tuples each) spread evenly over ``duration_s``.

    A frame is due when its last tuple is due, so the final frame is due exactly
    at the end of the run. With ``yield_ns > 0`` the loop sleeps while the window
    is more than ``yield_ns`` away and spins only for the rest, which leaves the
    CPU to a co-located receiver.
    """
    st = EmitStats(send_times=array("q") if record else None)
    total = sum(sizes)
    if total == 0:
        return st
    tuple_ns = duration_s * 1e9 / total
    due_off = array("q")
    done = 0
    for n in sizes:
        done += n
        due_off.append(int(done * tuple_ns))
    budget = int(budget_ns)
    misses = 0
    max_late = 0
    times = st.send_times
    start = clock()
    for frame, off in zip(frames, due_off):
        due = start + off
        lo = due - budget
        now = clock()
        if yield_ns and lo - now > yield_ns:
            time.sleep((lo - now - yield_ns) / 1e9)
            now = clock()
        while now < lo:
            now = clock()
        if now > due:
            misses += 1
            if now - due > max_late:
                max_late = now - due
        send(frame)
        if times is not None:
            times.append(now)
    st.end_ns = clock()
    st.start_ns = start
    st.tuples = total
    st.sends = len(frames)
    st.misses = misses
    st.max_late_ns = max_late
    return st


@dataclass
class SenderResult:
    plan: EmissionPlan
    threads: list[EmitStats] = field(default_factory=list)

    @property
    def sent(self) -> int:
        return sum(s.tuples for s in self.threads)

    @property
    def misses(self) -> int:
        return sum(s.misses for s in self.threads)

    @property
    def elapsed_s(self) -> float:
        active = [s for s in self.threads if s.sends]
        if not active:
            return 0.0
        return (max(s.end_ns for s in active) - min(s.start_ns for s in active)) / 1e9

    @property
    def achieved_rate(self) -> float:
        e = self.elapsed_s
        return self.sent / e if e > 0 else 0.0


def run_sender(
    plan: EmissionPlan,
    transport_factory: Callable[[], object] = NullTransport,
    sequence: bool = False,
    record: bool = False,
    yield_ns: int = 0,
) -> SenderResult:
    """One emission loop per thread, each on its own transport.

    With ``sequence=True`` tuple payloads carry global sequence numbers (thread
    ``i`` owns a contiguous range), for order checks on the receiver.
    """
    counts = plan.per_thread()
    jobs = []
    first = 0
    for c in counts:
        payload = (lambda i: sequence_payload(i, max(8, len(plan.payload)))) if sequence else plan.payload
        jobs.append((c, build_frames(c, plan.bucket, payload, first)))
        first += c
    transports = [transport_factory() for _ in counts]
    result = SenderResult(plan, [EmitStats() for _ in counts])
    barrier = threading.Barrier(len(counts))

    def work(i):
        c = jobs[i][0]
        barrier.wait()
        frames, sizes = jobs[i][1]
        result.threads[i] = emission_loop(
            frames, sizes, plan.duration, plan.budget_for(c), transports[i].send, record=record, yield_ns=yield_ns
        )

    try:
        if len(counts) == 1:
            work(0)
        else:
            ts = [threading.Thread(target=work, args=(i,), name=f"dg-send-{i}") for i in range(len(counts))]
            for t in ts:
                t.start()
            for t in ts:
                t.join()
    finally:
        for t in transports:
            t.close()
    return result


def measure_send_overhead(send: Callable[[bytes], None], frame: bytes | None = None, n: int = 100_000) -> float:
    """Mean nanoseconds per ``send`` call over ``n`` calls."""
    if n < 1:
        raise ValueError("n must be >= 1")
    frame = frame if frame is not None else encode_uniform_bucket(DEFAULT_PAYLOAD, 1)
    clock = time.perf_counter_ns
    t0 = clock()
    for _ in range(n):
        send(frame)
    return (clock() - t0) / n
