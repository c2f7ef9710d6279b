"""Maximum sustainable throughput search.

Raise the rate until a run drops tuples; the last rate without drops is the
answer. The default schedule ramps geometrically (x1.5) to the first failure,
then bisects between the last pass and the first failure down to a 2%
relative gap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOutcome:
    rate: float  # planned tuples/s
    sent: int
    ingested: int
    achieved_rate: float
    deadline_misses: int = 0
    rate_tolerance: float = 0.01

    def __post_init__(self):
        if self.ingested > self.sent:
            raise ValueError(f"ingested {self.ingested} > sent {self.sent}: counters out of step")

    @property
    def dropped(self) -> int:
        return self.sent - self.ingested

    @property
    def sustained(self) -> bool:
        """No drops, and the sender actually kept the planned rate."""
        return self.dropped == 0 and self.achieved_rate >= (1 - self.rate_tolerance) * self.rate


class BelowFloorError(RuntimeError):
    def __init__(self, outcome: RunOutcome):
        super().__init__(f"drops already at the starting rate {outcome.rate:g}/s ({outcome.dropped} dropped)")
        self.outcome = outcome


@dataclass
class SearchResult:
    rate: float
    runs: list[RunOutcome] = field(default_factory=list)
    reason: str = ""


def evaluate_max_throughput(
    run_trial: Callable[[float, float], RunOutcome],
    duration: float,
    t_start: float,
    factor: float = 1.5,
    refine: float = 0.02,
    max_runs: int = 20,
    schedule: Iterable[float] | None = None,
) -> SearchResult:
    """Largest tested rate whose run was sustained.

    ``schedule`` replaces the ramp with an explicit increasing rate list (no
    bisection afterwards). ``max_runs`` bounds the total number of runs.
    """
    if t_start <= 0 or factor <= 1 or refine <= 0 or max_runs < 1:
        raise ValueError("need t_start > 0, factor > 1, refine > 0, max_runs >= 1")
    runs: list[RunOutcome] = []

    def trial(rate):
        out = run_trial(rate, duration)
        runs.append(out)
        log.info("rate %.6g/s: sent %d ingested %d achieved %.6g/s", rate, out.sent, out.ingested, out.achieved_rate)
        return out.sustained

    if not trial(t_start):
        raise BelowFloorError(runs[-1])
    lo, hi = t_start, None

    rates = iter(schedule) if schedule is not None else None
    while len(runs) < max_runs:
        if rates is not None:
            nxt = next(rates, None)
            if nxt is None:
                return SearchResult(lo, runs, "schedule exhausted")
            if nxt <= lo:
                raise ValueError("schedule must be increasing")
        else:
            nxt = lo * factor
        if trial(nxt):
            lo = nxt
        else:
            hi = nxt
            break
    if hi is None:
        return SearchResult(lo, runs, "run limit reached while ramping")
    if rates is not None:
        return SearchResult(lo, runs, "first drop")
    while (hi - lo) / lo > refine:
        if len(runs) >= max_runs:
            return SearchResult(lo, runs, "run limit reached while refining")
        mid = (lo + hi) / 2
        if trial(mid):
            lo = mid
        else:
            hi = mid
    return SearchResult(lo, runs, "refined")


class FakeSut:
    """System with a hard ingestion capacity (tuples/s): the excess is dropped."""

    def __init__(self, capacity: float):
        self.capacity = capacity
        self.calls = 0

    def __call__(self, rate: float, duration: float) -> RunOutcome:
        self.calls += 1
        # ceil: any excess over capacity, however small, shows up as a drop
        sent = math.ceil(rate * duration - 1e-9)
        room = self.capacity * duration
        ingested = sent if room >= sent else int(room)
        return RunOutcome(rate, sent, ingested, rate)


def tcp_trial(
    peer: str,
    control: str,
    threads: int = 1,
    bucket: int = 1024,
    payload: bytes | None = None,
    budget_ns: float | None = None,
    idle_s: float = 1.0,
    yield_ns: int = 0,
) -> Callable[[float, float], RunOutcome]:
    """Trial runner against a live receiver: reset counters, send, compare counts."""
    from .emission import DEFAULT_PAYLOAD, EmissionPlan, TcpTransport, run_sender
    from .jof import control_request

    def run(rate: float, duration: float) -> RunOutcome:
        rate = round(rate * duration) / duration  # whole tuples
        control_request(control, "reset")
        plan = EmissionPlan(rate, duration, budget_ns, threads, payload or DEFAULT_PAYLOAD, bucket)
        res = run_sender(plan, lambda: TcpTransport(peer), yield_ns=yield_ns)
        counts = control_request(control, "wait", sent=res.sent, timeout=duration + 30, idle=idle_s)
        return RunOutcome(rate, res.sent, counts["ingested"], res.achieved_rate, res.misses)

    return run
