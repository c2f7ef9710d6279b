"""In-process fake transport with scripted per-message delays.

Nodes are :class:`~cloudprof.sim.SimNode` counters on a shared virtual clock.
A request advances the clock by the outbound delay, is answered by the same
code the real slave uses, then the clock advances by the return delay. With a
seeded RNG the whole session is deterministic.
"""

from __future__ import annotations

import random

from ..sim import Delay, SimNode, VirtualClock, make_node, uniform_delay
from .probe import ProbeTimeout, run_minrtt
from .slave import answer
from .wire import Frame


class FakeNetwork:
    def __init__(self, clock: VirtualClock | None = None, default_delay: Delay | None = None, seed: int = 0):
        self.clock = clock or VirtualClock()
        self.rng = random.Random(seed)
        self.default_delay = default_delay or uniform_delay(self.rng, 30_000.0, 300_000.0)
        self.nodes: dict[str, SimNode] = {}
        self.delays: dict[tuple[str, str], Delay] = {}

    def add_node(self, node_id: str, rate_hz: float, offset: int = 0) -> SimNode:
        node = make_node(node_id, self.clock, rate_hz, offset)
        self.nodes[node_id] = node
        return node

    def set_delay(self, src: str, dst: str, delay: Delay) -> None:
        """One-way delay for messages travelling ``src -> dst``."""
        self.delays[(src, dst)] = delay

    def delay(self, src: str, dst: str) -> float:
        return self.delays.get((src, dst), self.default_delay)()

    def link(self, src: str, dst: str) -> "FakeLink":
        return FakeLink(self, src, dst)

    def handle(self, node_id: str) -> "FakeNodeHandle":
        return FakeNodeHandle(self, node_id)

    def handles(self) -> list["FakeNodeHandle"]:
        return [self.handle(n) for n in self.nodes]


class FakeLink:
    def __init__(self, net: FakeNetwork, src: str, dst: str):
        self.net, self.src, self.dst = net, src, dst

    def request(self, frame: Frame, timeout: float = 1.0) -> Frame:
        net = self.net
        limit = timeout * 1e9
        out = net.delay(self.src, self.dst)
        if out > limit:
            net.clock.advance(limit)
            raise ProbeTimeout(f"seq {frame.seq} lost in flight")
        net.clock.advance(out)
        node = net.nodes[self.dst]
        reply = answer(frame, node.source, node.node_id)
        back = net.delay(self.dst, self.src)
        if out + back > limit:
            net.clock.advance(limit - out)
            raise ProbeTimeout(f"reply to seq {frame.seq} lost in flight")
        net.clock.advance(back)
        return reply


class FakeNodeHandle:
    """Master-side view of a simulated slave."""

    def __init__(self, net: FakeNetwork, node_id: str, timeout: float = 1.0):
        self.net = net
        self.node_id = node_id
        self.timeout = timeout

    def info(self) -> dict:
        node = self.net.nodes[self.node_id]
        return {"node_id": self.node_id, **node.source.describe()}

    def minrtt(self, peer: "FakeNodeHandle", iterations: int):
        src = self.net.nodes[self.node_id].source
        return run_minrtt(self.net.link(self.node_id, peer.node_id), src, iterations, (self.node_id, peer.node_id), self.timeout)
