"""Platform clock access: cycle counter, raw monotonic clock and calibration.

One counter source is selected per process before any concurrent use:

* ``tsc``       - the invariant time-stamp counter read with ``rdtscp``
                  (x86-64 Linux advertising ``constant_tsc`` and ``nonstop_tsc``).
* ``monotonic`` - ``CLOCK_MONOTONIC_RAW`` treated as a 1 GHz virtual counter.
* ``linear``    - a simulated counter ``offset + rate * t`` driven by some base
                  clock; used to emulate distinct nodes inside one host.

Set ``CLOUDPROF_CLOCK_SOURCE=tsc|monotonic`` to force the startup choice.
"""

from __future__ import annotations

import ctypes
import math
import mmap
import os
import platform
import threading
import time
from dataclasses import dataclass
from typing import Callable

__all__ = [
    "ClockSample",
    "CounterFrequency",
    "CounterReport",
    "InvalidSampleError",
    "CycleSource",
    "TscSource",
    "MonotonicSource",
    "LinearSource",
    "wall_ns",
    "read_cycles",
    "sample_clock_pair",
    "calibrate_frequency",
    "self_test_counter",
    "get_source",
    "set_source",
    "select_source",
    "tsc_supported",
]

_RAW = time.CLOCK_MONOTONIC_RAW
_clock_ns = time.clock_gettime_ns


class InvalidSampleError(ValueError):
    """Raised when clock samples cannot define a frequency."""


@dataclass(frozen=True)
class ClockSample:
    """A (wall nanoseconds, cycle count) pair read back-to-back on one node."""

    wall_ns: int
    cycles: int

    def to_dict(self) -> dict:
        return {"wall_ns": self.wall_ns, "cycles": self.cycles}

    @classmethod
    def from_dict(cls, d: dict) -> "ClockSample":
        return cls(int(d["wall_ns"]), int(d["cycles"]))


@dataclass(frozen=True)
class CounterFrequency:
    """Counter ticks per second."""

    hz: float

    def __post_init__(self):
        if not (math.isfinite(self.hz) and self.hz > 0):
            raise InvalidSampleError(f"frequency must be positive and finite, got {self.hz!r}")

    def ticks_to_ns(self, ticks: float) -> float:
        return ticks * 1e9 / self.hz

    def ns_to_ticks(self, ns: float) -> float:
        return ns * self.hz / 1e9


@dataclass(frozen=True)
class CounterReport:
    source: str
    iterations: int
    mean_latency_ns: float
    monotonic_violations: int


def wall_ns() -> int:
    """Raw monotonic wall clock in nanoseconds (never slewed by NTP)."""
    return _clock_ns(_RAW)


class CycleSource:
    """Base class for counter sources.

    ``sample`` reads the wall clock first and the counter immediately after.
    """

    name = "abstract"
    nominal_hz = 0.0

    def read_cycles(self) -> int:
        raise NotImplementedError

    def wall_ns(self) -> int:
        return _clock_ns(_RAW)

    def sample(self) -> ClockSample:
        w = self.wall_ns()
        return ClockSample(w, self.read_cycles())

    def describe(self) -> dict:
        return {"source": self.name, "nominal_hz": self.nominal_hz}


class MonotonicSource(CycleSource):
    """CLOCK_MONOTONIC_RAW nanoseconds used as ticks of a 1 GHz counter."""

    name = "monotonic"
    nominal_hz = 1e9

    def __init__(self):
        # bound method avoids an attribute lookup on every read
        self.read_cycles = self._read

    @staticmethod
    def _read() -> int:
        return _clock_ns(_RAW)

    def sample(self) -> ClockSample:
        # ticks are nanoseconds of the same clock: one read serves both
        w = _clock_ns(_RAW)
        return ClockSample(w, w)


# rdtscp ; shl rdx, 32 ; or rax, rdx ; ret
_RDTSCP_CODE = bytes([0x0F, 0x01, 0xF9, 0x48, 0xC1, 0xE2, 0x20, 0x48, 0x09, 0xD0, 0xC3])


def _cpu_flags() -> set[str]:
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.startswith("flags"):
                    return set(line.split(":", 1)[1].split())
    except OSError:
        pass
    return set()


def _tsc_khz_hint() -> float:
    """Kernel-reported TSC frequency, only used as a nominal value."""
    for path in ("/sys/devices/system/cpu/cpu0/tsc_freq_khz",):
        try:
            with open(path) as f:
                return float(f.read().strip()) * 1e3
        except (OSError, ValueError):
            pass
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.startswith("cpu MHz"):
                    return float(line.split(":", 1)[1]) * 1e6
    except (OSError, ValueError):
        pass
    return 0.0


def tsc_supported() -> bool:
    if platform.system() != "Linux" or platform.machine() not in ("x86_64", "AMD64"):
        return False
    flags = _cpu_flags()
    return {"constant_tsc", "nonstop_tsc", "rdtscp"} <= flags


class TscSource(CycleSource):
    """Invariant TSC read through a tiny executable stub."""

    name = "tsc"

    def __init__(self):
        if not tsc_supported():
            raise OSError("invariant TSC with rdtscp not advertised on this host")
        self._page = mmap.mmap(
            -1, mmap.PAGESIZE, prot=mmap.PROT_READ | mmap.PROT_WRITE | mmap.PROT_EXEC
        )
        self._page.write(_RDTSCP_CODE)
        addr = ctypes.addressof(ctypes.c_char.from_buffer(self._page))
        self._fn = ctypes.CFUNCTYPE(ctypes.c_uint64)(addr)
        self.read_cycles = self._fn
        self.nominal_hz = _tsc_khz_hint()
        a = self._fn()
        b = self._fn()
        if b < a:
            raise OSError("TSC stub returned a decreasing value")

    def sample(self) -> ClockSample:
        w = _clock_ns(_RAW)
        return ClockSample(w, self._fn())


class LinearSource(CycleSource):
    """Simulated counter ``offset + rate_hz * t`` over a base nanosecond clock.

    Both the counter and the wall clock are derived from one base read, so the
    pair is exact ground truth. ``wall_offset_ns`` lets simulated nodes disagree
    on wall time too.
    """

    name = "linear"

    def __init__(
        self,
        rate_hz: float,
        offset: int = 0,
        base: Callable[[], int] = wall_ns,
        wall_offset_ns: int = 0,
    ):
        if not rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        self.rate_hz = float(rate_hz)
        self.nominal_hz = float(rate_hz)
        self.offset = int(offset)
        self.base = base
        self.wall_offset_ns = int(wall_offset_ns)
        self._per_ns = self.rate_hz / 1e9

    def cycles_at(self, t_ns: float) -> int:
        return self.offset + int(t_ns * self._per_ns)

    def read_cycles(self) -> int:
        return self.offset + int(self.base() * self._per_ns)

    def wall_ns(self) -> int:
        return int(self.base()) + self.wall_offset_ns

    def sample(self) -> ClockSample:
        t = self.base()
        return ClockSample(int(t) + self.wall_offset_ns, self.offset + int(t * self._per_ns))

    def describe(self) -> dict:
        return {"source": self.name, "nominal_hz": self.nominal_hz, "offset": self.offset}


_lock = threading.Lock()
_source: CycleSource | None = None


def select_source(prefer: str | None = None) -> CycleSource:
    """Pick the native TSC if usable, else the monotonic fallback."""
    prefer = prefer or os.environ.get("CLOUDPROF_CLOCK_SOURCE", "auto")
    if prefer == "monotonic":
        return MonotonicSource()
    try:
        return TscSource()
    except (OSError, ValueError, AttributeError):
        if prefer == "tsc":
            raise
        return MonotonicSource()


def get_source() -> CycleSource:
    global _source
    src = _source
    if src is None:
        with _lock:
            if _source is None:
                _source = select_source()
            src = _source
    return src


def set_source(source: CycleSource | None) -> None:
    """Install ``source`` process-wide; ``None`` re-runs startup selection lazily."""
    global _source
    with _lock:
        _source = source


def read_cycles() -> int:
    return get_source().read_cycles()


def sample_clock_pair() -> ClockSample:
    return get_source().sample()


def calibrate_frequency(s1: ClockSample, s2: ClockSample) -> CounterFrequency:
    """Counter frequency from two samples of the same node.

    The ratio is formed with exact integer arithmetic and rounded once, which
    keeps sub-Hz resolution for multi-GHz counters.
    """
    d_wall = s2.wall_ns - s1.wall_ns
    d_cyc = s2.cycles - s1.cycles
    if d_wall <= 0 or d_cyc <= 0:
        raise InvalidSampleError(
            f"need increasing samples, got d_wall={d_wall} ns, d_cycles={d_cyc}"
        )
    return CounterFrequency(d_cyc * 1_000_000_000 / d_wall)


def self_test_counter(iterations: int = 100_000, source: CycleSource | None = None) -> CounterReport:
    """Mean per-read latency and number of backward steps of the counter."""
    if iterations < 10_000:
        raise ValueError("iterations must be >= 1e4")
    src = source or get_source()
    read = src.read_cycles
    violations = 0
    prev = read()
    t0 = time.perf_counter_ns()
    for _ in range(iterations):
        c = read()
        if c < prev:
            violations += 1
        prev = c
    elapsed = time.perf_counter_ns() - t0
    # subtract the bare loop cost so the figure approximates the read itself
    t1 = time.perf_counter_ns()
    for _ in range(iterations):
        c = prev
        if c < prev:
            violations += 0
    loop = time.perf_counter_ns() - t1
    mean = max(elapsed - loop, 0) / iterations
    return CounterReport(src.name, iterations, mean, violations)
