"""Acknowledgment transport for the ReT handlers.

The end node sends one RETACK frame (u64 tuple id payload) per logged tuple
back to the start node, using the probe daemons' frame format.
"""

from __future__ import annotations

import logging
import selectors
import socket
import threading
from typing import Callable

from ..minrtt.wire import FrameBuffer, FrameError, MsgType, connect, decode_u64, parse_addr, u64_frame

log = logging.getLogger(__name__)


class RetAckServer:
    """Listens on the start node and calls ``on_ack(tuple_id)`` per RETACK."""

    def __init__(self, bind: str | tuple[str, int], on_ack: Callable[[int], None]):
        if isinstance(bind, str):
            bind = parse_addr(bind)
        self.on_ack = on_ack
        self._listener = socket.create_server(bind)
        self._listener.setblocking(False)
        self.address = self._listener.getsockname()[:2]
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._listener, selectors.EVENT_READ, None)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="cplg-retack", daemon=True)
        self._thread.start()

    @property
    def addr(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _loop(self) -> None:
        while not self._stop.is_set():
            for key, _ in self._sel.select(0.05):
                if key.data is None:
                    conn, _ = self._listener.accept()
                    conn.setblocking(True)
                    self._sel.register(conn, selectors.EVENT_READ, FrameBuffer())
                    continue
                conn = key.fileobj
                try:
                    data = conn.recv(65536)
                except OSError:
                    data = b""
                if not data:
                    self._sel.unregister(conn)
                    conn.close()
                    continue
                try:
                    for frame in key.data.feed(data):
                        if frame.msg_type == MsgType.RETACK:
                            self.on_ack(decode_u64(frame.payload))
                except FrameError as exc:
                    log.warning("dropping ack connection: %s", exc)
                    self._sel.unregister(conn)
                    conn.close()
        for key in list(self._sel.get_map().values()):
            key.fileobj.close()
        self._sel.close()

    def close(self) -> None:
        self._stop.set()
        self._thread.join(5)


class RetAckClient:
    def __init__(self, addr: str):
        self._sock = connect(addr)
        self._sock.settimeout(None)
        self._seq = 0

    def send(self, tuple_id: int) -> None:
        self._seq = (self._seq + 1) & 0xFFFFFFFF
        self._sock.sendall(u64_frame(MsgType.RETACK, self._seq, tuple_id).encode())

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._sock.close()


class FakeRetTransport:
    """In-process ack path on a virtual clock: each ack takes ``delay_ns`` to arrive."""

    def __init__(self, clock, delay_ns: float, on_ack: Callable[[int], None]):
        self.clock = clock
        self.delay_ns = delay_ns
        self.on_ack = on_ack

    def send(self, tuple_id: int) -> None:
        self.clock.advance(self.delay_ns)
        self.on_ack(tuple_id)
