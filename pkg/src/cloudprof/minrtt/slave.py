"""Responder daemon run on every measured node.

A single service loop answers probes, so the remote counter read of one probe
is never blurred by another. While the slave runs a measurement it ordered
itself (MEASURE_CMD) it does not answer probes; the master serialises pairs.
"""

from __future__ import annotations

import logging
import selectors
import socket
import threading

from .. import coretime
from ..coretime import CycleSource
from .probe import MeasurementFailed, TcpLink, run_minrtt
from .wire import Frame, FrameBuffer, FrameError, MsgType, connect, json_frame, parse_addr, probe_response

log = logging.getLogger(__name__)


def answer(frame: Frame, source: CycleSource, node_id: str, measure=None) -> Frame | None:
    """Reply for one request frame; ``measure(payload) -> dict`` handles MEASURE_CMD."""
    if frame.msg_type == MsgType.PROBE_REQ:
        return probe_response(frame.seq, source.read_cycles())
    if frame.msg_type == MsgType.REGISTER:
        return json_frame(MsgType.REGISTER, frame.seq, {"node_id": node_id, **source.describe()})
    if frame.msg_type == MsgType.MEASURE_CMD and measure is not None:
        return json_frame(MsgType.RESULT, frame.seq, measure(frame.json()))
    raise FrameError(f"unexpected message type {frame.msg_type}")


class Slave:
    def __init__(self, bind: str | tuple[str, int], node_id: str, source: CycleSource | None = None):
        self.node_id = str(node_id)
        self.source = source or coretime.get_source()
        if isinstance(bind, str):
            bind = parse_addr(bind)
        self._listener = socket.create_server(bind, reuse_port=False)
        self._listener.setblocking(False)
        self.address = self._listener.getsockname()[:2]
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._listener, selectors.EVENT_READ, None)
        self._peers: dict[str, TcpLink] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._seq = 1

    @property
    def addr(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _measure(self, cmd: dict) -> dict:
        peer = cmd["peer"]
        try:
            link = self._peers.get(peer)
            if link is None:
                link = self._peers[peer] = TcpLink(connect(peer))
            m = run_minrtt(
                link,
                self.source,
                int(cmd.get("iterations", 100)),
                (self.node_id, str(cmd.get("peer_id", peer))),
                float(cmd.get("timeout", 1.0)),
                first_seq=self._seq,
            )
            self._seq = (self._seq + m.probes_run) & 0xFFFFFFFF
            return {"ok": True, "measurement": m.to_dict()}
        except (OSError, MeasurementFailed) as exc:
            self._peers.pop(peer, None)
            return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}

    def _accept(self) -> None:
        conn, _ = self._listener.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.setblocking(True)
        self._sel.register(conn, selectors.EVENT_READ, FrameBuffer())

    def _drop(self, conn: socket.socket) -> None:
        self._sel.unregister(conn)
        conn.close()

    def _service(self, conn: socket.socket, decoder: FrameBuffer) -> None:
        try:
            data = conn.recv(65536)
        except OSError:
            data = b""
        if not data:
            self._drop(conn)
            return
        try:
            for frame in decoder.feed(data):
                reply = answer(frame, self.source, self.node_id, self._measure)
                conn.sendall(reply.encode())
        except (FrameError, ValueError, KeyError) as exc:
            log.warning("malformed request from %s: %s", conn.getpeername(), exc)
            self._drop(conn)
        except OSError:
            self._drop(conn)

    def serve_forever(self, poll: float = 0.2) -> None:
        while not self._stop.is_set():
            for key, _ in self._sel.select(poll):
                if key.data is None:
                    self._accept()
                else:
                    self._service(key.fileobj, key.data)
        for key in list(self._sel.get_map().values()):
            key.fileobj.close()
        self._sel.close()
        for link in self._peers.values():
            link.close()

    def start(self) -> "Slave":
        self._thread = threading.Thread(target=self.serve_forever, name=f"slave-{self.node_id}", daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(5)


def slave_serve(bind: str, node_id: str, source: CycleSource | None = None) -> None:
    Slave(bind, node_id, source).serve_forever()
