"""Relating two nodes' cycle counters through a pair of minimum-RTT probes.

Notation used throughout (local node A probes remote node B):

* a probe triple is ``(c_i, c_j_remote, c_k)``: A's counter before sending,
  B's counter read on receipt, A's counter after the reply arrived;
* the remote read happened somewhere in ``[c_i, c_k]`` of A's counter, so its
  local equivalent is the midpoint ``(c_i + c_k) / 2`` with half the RTT as
  uncertainty;
* two such measurements (``m1`` earlier, ``m2`` later) give the rate ratio of
  the counters and a linear map from B ticks to A ticks.

For an event on B at ``c_y`` the interpolation weight is
``w = (c_y - c_j) / (c_m - c_j)`` (remote ticks of m1 and m2). The converted
value is ``est_j + w * (est_m - est_j)`` and its uncertainty is
``|1 - w| * err_j + |w| * err_m``. Inside the bracket (0 <= w <= 1) that is the
familiar ``err_j - w * (err_j - err_m)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable

from .coretime import ClockSample, CounterFrequency, calibrate_frequency

SCHEMA_VERSION = 1


class DegenerateRelationError(ValueError):
    """The two measurements cannot define a counter ratio."""


class OrderingError(ValueError):
    """A duration was requested with its end before its start."""


@dataclass(frozen=True)
class RttTriple:
    c_start_local: int
    c_remote: int
    c_end_local: int
    local_sample_start: ClockSample | None = None
    local_sample_end: ClockSample | None = None

    def __post_init__(self):
        if self.c_end_local < self.c_start_local:
            raise OrderingError("probe ended before it started")

    @property
    def rtt_ticks(self) -> int:
        return self.c_end_local - self.c_start_local

    def to_dict(self) -> dict:
        return {
            "c_start_local": self.c_start_local,
            "c_remote": self.c_remote,
            "c_end_local": self.c_end_local,
            "local_sample_start": None if self.local_sample_start is None else self.local_sample_start.to_dict(),
            "local_sample_end": None if self.local_sample_end is None else self.local_sample_end.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RttTriple":
        s, e = d.get("local_sample_start"), d.get("local_sample_end")
        return cls(
            int(d["c_start_local"]),
            int(d["c_remote"]),
            int(d["c_end_local"]),
            None if s is None else ClockSample.from_dict(s),
            None if e is None else ClockSample.from_dict(e),
        )


@dataclass(frozen=True)
class MinRttMeasurement:
    """The winning probe of ``probes_run`` attempts from ``direction[0]`` to ``direction[1]``."""

    triple: RttTriple
    probes_run: int
    direction: tuple[str, str] = ("A", "B")
    rtt_ns: float | None = None

    @property
    def rtt_ticks(self) -> int:
        return self.triple.rtt_ticks

    def to_dict(self) -> dict:
        return {
            "triple": self.triple.to_dict(),
            "rtt_ticks": self.rtt_ticks,
            "rtt_ns": self.rtt_ns,
            "probes_run": self.probes_run,
            "direction": list(self.direction),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinRttMeasurement":
        return cls(
            RttTriple.from_dict(d["triple"]),
            int(d["probes_run"]),
            tuple(d["direction"]),
            d.get("rtt_ns"),
        )


@dataclass(frozen=True)
class BestEstimate:
    best: float
    uncertainty: float

    def to_dict(self) -> dict:
        return {"best": self.best, "uncertainty": self.uncertainty}


@dataclass(frozen=True)
class MeasuredDuration:
    best_ticks: float
    uncertainty_ticks: float
    best_ns: float
    uncertainty_ns: float

    @classmethod
    def from_ticks(cls, best: float, err: float, freq: CounterFrequency) -> "MeasuredDuration":
        return cls(best, err, freq.ticks_to_ns(best), freq.ticks_to_ns(err))

    def contains_ns(self, value_ns: float) -> bool:
        return abs(value_ns - self.best_ns) <= self.uncertainty_ns

    def __str__(self) -> str:
        return f"{self.best_ns:.3f} ns +/- {self.uncertainty_ns:.3f} ns"


@dataclass(frozen=True)
class NtpStatus:
    """One chronyc-style reading, all values in seconds.

    ``root_sync_distance`` is carried verbatim and takes no part in the bound.
    """

    offset: float
    root_dispersion: float
    root_delay: float
    root_sync_distance: float | None = None

    def __post_init__(self):
        if self.root_dispersion < 0 or self.root_delay < 0:
            raise ValueError("root dispersion and root delay must be >= 0")


def best_estimate(t: RttTriple) -> BestEstimate:
    """Midpoint of the probe interval, half the RTT as uncertainty."""
    return BestEstimate((t.c_start_local + t.c_end_local) / 2, (t.c_end_local - t.c_start_local) / 2)


def ratio_of(remote_j: float, remote_m: float, local_j: float, local_m: float) -> float:
    """Elapsed remote ticks per elapsed local tick between two anchor points."""
    d_local = local_m - local_j
    if not d_local > 0:
        raise DegenerateRelationError("local anchors do not advance")
    if not remote_m - remote_j > 0:
        raise DegenerateRelationError("remote anchors do not advance")
    return (remote_m - remote_j) / d_local


def compute_ratio(m1: MinRttMeasurement, m2: MinRttMeasurement) -> float:
    t1, t2 = m1.triple, m2.triple
    # twice the local best estimates, kept as exact integers
    local2 = (t2.c_start_local + t2.c_end_local) - (t1.c_start_local + t1.c_end_local)
    remote = t2.c_remote - t1.c_remote
    if local2 <= 0 or remote <= 0:
        raise DegenerateRelationError(
            f"second measurement must follow the first (local x2 delta={local2}, remote delta={remote})"
        )
    return 2 * remote / local2


@dataclass(frozen=True)
class ClockRelation:
    """Everything needed to map one node's ticks onto another's.

    ``ref_freq`` is the calibrated frequency of the local (probing) node, the
    tick unit every result of this relation is expressed in.
    """

    m1: MinRttMeasurement
    m2: MinRttMeasurement
    ratio: float
    est_j: BestEstimate
    est_m: BestEstimate
    ref_freq: CounterFrequency
    ref_node: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def local_node(self) -> str:
        return self.m1.direction[0]

    @property
    def remote_node(self) -> str:
        return self.m1.direction[1]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "direction": {"local": self.local_node, "remote": self.remote_node},
            "ref_node": self.ref_node,
            "m1": self.m1.to_dict(),
            "m2": self.m2.to_dict(),
            "ratio": self.ratio,
            "est_j": self.est_j.to_dict(),
            "est_m": self.est_m.to_dict(),
            "ref_freq_hz": self.ref_freq.hz,
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClockRelation":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported relation schema {d.get('schema_version')!r}")
        m1 = MinRttMeasurement.from_dict(d["m1"])
        m2 = MinRttMeasurement.from_dict(d["m2"])
        return cls(
            m1,
            m2,
            float(d["ratio"]),
            BestEstimate(**d["est_j"]),
            BestEstimate(**d["est_m"]),
            CounterFrequency(float(d["ref_freq_hz"])),
            d.get("ref_node"),
            d.get("extra", {}),
        )


def make_relation(
    m1: MinRttMeasurement,
    m2: MinRttMeasurement,
    ref_freq: CounterFrequency | None = None,
    ref_node: str | None = None,
) -> ClockRelation:
    """Build a relation; without ``ref_freq`` the local node's frequency is
    calibrated from the first probe's start sample and the last probe's end sample."""
    if m1.direction != m2.direction:
        raise DegenerateRelationError(f"direction mismatch {m1.direction} vs {m2.direction}")
    ratio = compute_ratio(m1, m2)
    if not (math.isfinite(ratio) and ratio > 0):
        raise DegenerateRelationError(f"invalid ratio {ratio}")
    if ref_freq is None:
        s1, s2 = m1.triple.local_sample_start, m2.triple.local_sample_end
        if s1 is None or s2 is None:
            raise DegenerateRelationError("no local clock samples to calibrate a frequency from")
        ref_freq = calibrate_frequency(s1, s2)
    return ClockRelation(m1, m2, ratio, best_estimate(m1.triple), best_estimate(m2.triple), ref_freq, ref_node)


def _weight(c_y_remote: int, rel: ClockRelation) -> float:
    span = rel.m2.triple.c_remote - rel.m1.triple.c_remote
    if span == 0:
        raise DegenerateRelationError("remote anchors coincide")
    return (c_y_remote - rel.m1.triple.c_remote) / span


def _local_span(rel: ClockRelation) -> float:
    t1, t2 = rel.m1.triple, rel.m2.triple
    return ((t2.c_start_local + t2.c_end_local) - (t1.c_start_local + t1.c_end_local)) / 2


def propagated_uncertainty(w: float, err_j: float, err_m: float) -> float:
    """Linear error propagation with absolute partial derivatives.

    d(duration)/d(est_j) = 1 - w and d(duration)/d(est_m) = w.
    """
    return abs(1.0 - w) * err_j + abs(w) * err_m


def convert_remote_to_local(c_y_remote: int, rel: ClockRelation) -> float:
    """Best estimate of a remote counter value in local ticks."""
    w = _weight(c_y_remote, rel)
    return rel.est_j.best + w * _local_span(rel)


def remote_to_local_estimate(c_y_remote: int, rel: ClockRelation) -> BestEstimate:
    w = _weight(c_y_remote, rel)
    return BestEstimate(
        rel.est_j.best + w * _local_span(rel),
        propagated_uncertainty(w, rel.est_j.uncertainty, rel.est_m.uncertainty),
    )


def convert_local_to_remote(c_x_local: float, rel: ClockRelation) -> float:
    """Inverse of :func:`convert_remote_to_local`."""
    return rel.m1.triple.c_remote + (c_x_local - rel.est_j.best) * rel.ratio


def duration_with_error(c_x_local: int, c_y_remote: int, rel: ClockRelation) -> MeasuredDuration:
    """Duration from a local event at ``c_x_local`` to a remote event at ``c_y_remote``."""
    t1 = rel.m1.triple
    w = _weight(c_y_remote, rel)
    # est_j - c_x, exact in integers before the single division
    head = (t1.c_start_local + t1.c_end_local - 2 * c_x_local) / 2
    best = head + w * _local_span(rel)
    err = propagated_uncertainty(w, rel.est_j.uncertainty, rel.est_m.uncertainty)
    return MeasuredDuration.from_ticks(best, err, rel.ref_freq)


def ntp_error_bound(s: NtpStatus) -> float:
    """Maximum clock error in seconds: ``|offset| + dispersion + delay / 2``."""
    return abs(s.offset) + s.root_dispersion + 0.5 * s.root_delay


def ntp_interval(s: NtpStatus) -> tuple[float, float]:
    """Interval around the offset that the true clock error lies in."""
    half = s.root_dispersion + 0.5 * s.root_delay
    return s.offset - half, s.offset + half


def ret_duration(
    t1_local: int, t3_local: int, freq: CounterFrequency, max_rtt_ns: float = 0.0
) -> MeasuredDuration:
    """Return-trip duration on a single counter; accuracy is the session's max RTT."""
    if t3_local < t1_local:
        raise OrderingError(f"T3 ({t3_local}) precedes T1 ({t1_local})")
    if max_rtt_ns < 0:
        raise ValueError("max_rtt_ns must be >= 0")
    best = t3_local - t1_local
    return MeasuredDuration(best, freq.ns_to_ticks(max_rtt_ns), freq.ticks_to_ns(best), float(max_rtt_ns))


def relation_filename(local: str, remote: str) -> str:
    return f"rel_{local}_{remote}.json"


def dumps_relation(rel: ClockRelation) -> str:
    return json.dumps(rel.to_dict(), sort_keys=True, indent=2) + "\n"


def write_relation_file(rel: ClockRelation, out_dir: str | os.PathLike) -> str:
    path = os.path.join(out_dir, relation_filename(rel.local_node, rel.remote_node))
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_relation(rel))
    return path


def read_relation_file(path: str | os.PathLike) -> ClockRelation:
    with open(path, encoding="utf-8") as f:
        return ClockRelation.from_dict(json.load(f))


def load_relations(paths: Iterable[str | os.PathLike]) -> dict[tuple[str, str], ClockRelation]:
    out = {}
    for p in paths:
        rel = read_relation_file(p)
        out[(rel.local_node, rel.remote_node)] = rel
    return out
