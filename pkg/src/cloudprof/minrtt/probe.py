"""RTT probes and minimum-RTT selection."""

from __future__ import annotations

import socket
import time
from collections import deque

from ..coretime import CycleSource
from ..relation import MinRttMeasurement, RttTriple
from .wire import Frame, FrameBuffer, MsgType, probe_request, send_frame


class ProbeTimeout(TimeoutError):
    pass


class MeasurementFailed(RuntimeError):
    pass


class TcpLink:
    """Request/response over one persistent stream connection."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._decoder = FrameBuffer()
        self._pending: deque[Frame] = deque()

    def send(self, frame: Frame) -> None:
        send_frame(self.sock, frame)

    def receive(self, seq: int, timeout: float) -> Frame:
        """Wait for the reply with sequence ``seq``; stale replies are dropped."""
        deadline = time.monotonic() + timeout
        while True:
            while self._pending:
                frame = self._pending.popleft()
                if frame.seq == seq:
                    return frame
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProbeTimeout(f"no reply for seq {seq}")
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(65536)
            except socket.timeout as exc:
                raise ProbeTimeout(f"no reply for seq {seq}") from exc
            if not data:
                raise ConnectionError("peer closed the connection")
            # partial frames stay buffered across timeouts
            self._pending.extend(self._decoder.feed(data))

    def request(self, frame: Frame, timeout: float = 1.0) -> Frame:
        self.send(frame)
        return self.receive(frame.seq, timeout)

    def close(self) -> None:
        self.sock.close()


def run_rtt_probe(link, source: CycleSource, seq: int, timeout: float = 1.0) -> RttTriple:
    """One probe: local sample, request, remote counter, local sample.

    The local samples double as the start/end counter reads, so the triple and
    the wall-clock samples used for frequency calibration are the same reads.
    """
    req = probe_request(seq)
    start = source.sample()
    resp = link.request(req, timeout)
    end = source.sample()
    if resp.msg_type != MsgType.PROBE_RESP:
        raise ProbeTimeout(f"unexpected reply type {resp.msg_type} to probe {seq}")
    return RttTriple(start.cycles, resp.cycles, end.cycles, start, end)


def run_minrtt(
    link,
    source: CycleSource,
    iterations: int = 100,
    direction: tuple[str, str] = ("A", "B"),
    timeout: float = 1.0,
    first_seq: int = 1,
) -> MinRttMeasurement:
    """Run ``iterations`` probes and keep the one with the smallest RTT in ticks."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    best: RttTriple | None = None
    for i in range(iterations):
        try:
            t = run_rtt_probe(link, source, (first_seq + i) & 0xFFFFFFFF, timeout)
        except ProbeTimeout:
            continue
        if best is None or t.rtt_ticks < best.rtt_ticks:
            best = t
    if best is None:
        raise MeasurementFailed(f"all {iterations} probes {direction[0]}->{direction[1]} timed out")
    rtt_ns = float(best.local_sample_end.wall_ns - best.local_sample_start.wall_ns)
    return MinRttMeasurement(best, iterations, tuple(direction), rtt_ns)
