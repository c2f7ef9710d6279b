"""Desk-scale simulation of nodes with independent cycle counters.

Simulated nodes read :class:`~cloudprof.coretime.LinearSource` counters driven
by one :class:`VirtualClock`, so every tick value has an exact true time
behind it. Message delays come from small callables returning nanoseconds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .coretime import ClockSample, LinearSource
from .relation import ClockRelation, MinRttMeasurement, RttTriple, make_relation

Delay = Callable[[], float]


class VirtualClock:
    """True time in nanoseconds; only moves when advanced."""

    def __init__(self, start_ns: float = 0.0):
        self.t = float(start_ns)

    def __call__(self) -> float:
        return self.t

    def advance(self, dt_ns: float) -> None:
        if dt_ns < 0:
            raise ValueError("time cannot go backwards")
        self.t += dt_ns

    def sleep(self, seconds: float) -> None:
        self.advance(seconds * 1e9)


def uniform_delay(rng: random.Random, lo_ns: float, hi_ns: float) -> Delay:
    return lambda: rng.uniform(lo_ns, hi_ns)


def constant_delay(ns: float) -> Delay:
    return lambda: ns


def scripted_delay(values_ns: Iterable[float], then: Delay | None = None) -> Delay:
    """Yield the given delays in order, then fall back to ``then`` (or repeat the last)."""
    it: Iterator[float] = iter(values_ns)
    last = [0.0]

    def nxt() -> float:
        for v in it:
            last[0] = v
            return v
        return then() if then is not None else last[0]

    return nxt


class SwitchableDelay:
    """Delay whose underlying model can be swapped between regimes."""

    def __init__(self, model: Delay):
        self.model = model

    def __call__(self) -> float:
        return self.model()


@dataclass
class SimNode:
    node_id: str
    source: LinearSource


def make_node(node_id: str, clock: VirtualClock, rate_hz: float, offset: int = 0, wall_offset_ns: int = 0) -> SimNode:
    return SimNode(node_id, LinearSource(rate_hz, offset, base=clock, wall_offset_ns=wall_offset_ns))


@dataclass
class TwoClockScenario:
    """Two nodes A (local, reference) and B (remote) probed back-to-back.

    ``run_minrtt`` simulates ``probes`` probes starting at the current virtual
    time; each probe's outbound and return legs draw from ``delay``.
    ``gap_ns`` separates consecutive probes.
    """

    rng: random.Random
    freq_a: float
    freq_b: float
    offset_a: int = 0
    offset_b: int = 0
    delay: Delay | None = None
    probes: int = 100
    gap_ns: float = 1_000.0
    clock: VirtualClock = field(default_factory=VirtualClock)

    def __post_init__(self):
        if self.delay is None:
            self.delay = uniform_delay(self.rng, 30_000.0, 300_000.0)
        self.a = make_node("A", self.clock, self.freq_a, self.offset_a)
        self.b = make_node("B", self.clock, self.freq_b, self.offset_b)

    def counter_a(self, t_ns: float) -> int:
        return self.a.source.cycles_at(t_ns)

    def counter_b(self, t_ns: float) -> int:
        return self.b.source.cycles_at(t_ns)

    def probe(self) -> tuple[RttTriple, float]:
        """One probe from A to B; returns the triple and the remote read's true time."""
        c = self.clock
        s0 = ClockSample(int(c.t), self.counter_a(c.t))
        c.advance(self.delay())
        t_remote = c.t
        c_remote = self.counter_b(t_remote)
        c.advance(self.delay())
        s1 = ClockSample(int(c.t), self.counter_a(c.t))
        return RttTriple(s0.cycles, c_remote, s1.cycles, s0, s1), t_remote

    def run_minrtt(self) -> tuple[MinRttMeasurement, float]:
        best = None
        for _ in range(self.probes):
            triple, t_remote = self.probe()
            if best is None or triple.rtt_ticks < best[0].rtt_ticks:
                best = (triple, t_remote)
            self.clock.advance(self.gap_ns)
        triple, t_remote = best
        rtt_ns = triple.rtt_ticks * 1e9 / self.freq_a
        return MinRttMeasurement(triple, self.probes, ("A", "B"), rtt_ns), t_remote

    def build_relation(self, spacing_ns: float = 10e9) -> tuple[ClockRelation, float, float]:
        """m1 now, m2 after ``spacing_ns``; returns the relation and both remote-read true times."""
        m1, tj = self.run_minrtt()
        self.clock.advance(spacing_ns)
        m2, tm = self.run_minrtt()
        return make_relation(m1, m2, ref_node="A"), tj, tm
