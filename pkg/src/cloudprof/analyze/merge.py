"""Joining sink files by tuple id and turning record pairs into durations.

Logs are laid out one directory per node: ``<logs>/<node_id>/<channel>.cplg``.
Files directly under ``<logs>`` belong to node ``LOCAL_NODE``. A channel is
addressed by its name, or by ``node/name`` when the name occurs on several
nodes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..coretime import ClockSample, CounterFrequency, calibrate_frequency
from ..minrtt.master import node_sort_key
from ..profiler.sinkfile import Sink, read_sink
from ..profiler.spec import DataFormat, HandlerKind
from ..relation import (
    BestEstimate,
    ClockRelation,
    MeasuredDuration,
    duration_with_error,
    load_relations,
    remote_to_local_estimate,
)

LOCAL_NODE = "local"
SINK_SUFFIX = ".cplg"
_TRACE_KINDS = {
    HandlerKind.ID,
    HandlerKind.BUFFERED_ID,
    HandlerKind.DOWNSAMPLE,
    HandlerKind.XOY,
    HandlerKind.FIRST_LAST,
}


class MergeError(ValueError):
    pass


class MissingRelationError(MergeError):
    pass


class TraceDataError(MergeError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    channel: str
    node: str
    ticks: int
    wall_ns: int | None = None


@dataclass
class TupleTrace:
    tuple_id: int
    records: list[TraceRecord] = field(default_factory=list)

    def get(self, channel: str) -> TraceRecord | None:
        for r in self.records:
            if r.channel == channel:
                return r
        return None

    @property
    def nodes(self) -> set[str]:
        return {r.node for r in self.records}


@dataclass(frozen=True)
class TraceDuration:
    tuple_id: int
    duration: MeasuredDuration
    locality: str  # "local" or "remote"
    multi_node: bool = False  # local pair whose trace visits other nodes


@dataclass
class ChannelLog:
    name: str  # qualified node/channel
    node: str
    channel: str
    data_format: DataFormat
    kind: HandlerKind
    tuple_ids: np.ndarray
    ticks: np.ndarray
    wall_ns: np.ndarray | None
    duplicates: int = 0


@dataclass
class ClockContext:
    """Per-node frequencies and pairwise relations."""

    relations: dict[tuple[str, str], ClockRelation] = field(default_factory=dict)
    freqs: dict[str, CounterFrequency] = field(default_factory=dict)
    ref_node: str | None = None

    def freq(self, node: str) -> CounterFrequency:
        try:
            return self.freqs[node]
        except KeyError:
            raise MergeError(f"no counter frequency known for node {node!r}") from None

    def _to_ref(self, node: str, ticks: int) -> BestEstimate:
        if node == self.ref_node:
            return BestEstimate(float(ticks), 0.0)
        rel = self.relations.get((self.ref_node, node))
        if rel is None:
            raise MissingRelationError(f"no relation {self.ref_node}->{node}")
        return remote_to_local_estimate(ticks, rel)

    def cross_node(self, node_a: str, c_x: int, node_b: str, c_y: int) -> MeasuredDuration:
        """Duration from ``c_x`` on ``node_a`` to ``c_y`` on ``node_b``.

        Uses relation (a, b) when present, else the negated (b, a) result, else
        both ends mapped onto the reference node with their uncertainties added.
        """
        rel = self.relations.get((node_a, node_b))
        if rel is not None:
            return duration_with_error(c_x, c_y, rel)
        rel = self.relations.get((node_b, node_a))
        if rel is not None:
            d = duration_with_error(c_y, c_x, rel)
            return MeasuredDuration(-d.best_ticks, d.uncertainty_ticks, -d.best_ns, d.uncertainty_ns)
        if self.ref_node is None:
            raise MissingRelationError(f"no relation between {node_a} and {node_b}")
        x = self._to_ref(node_a, c_x)
        y = self._to_ref(node_b, c_y)
        freq = self.freq(self.ref_node)
        return MeasuredDuration.from_ticks(y.best - x.best, x.uncertainty + y.uncertainty, freq)


@dataclass
class TraceSet:
    channels: dict[str, ChannelLog]
    clocks: ClockContext
    skipped: list[str] = field(default_factory=list)  # sinks without tuple ids
    ret: list[tuple[str, Sink]] = field(default_factory=list)  # (node, RET_START sink)
    _traces: dict[int, TupleTrace] | None = None

    def resolve(self, channel: str) -> str:
        if channel in self.channels:
            return channel
        hits = [k for k, c in self.channels.items() if c.channel == channel]
        if len(hits) == 1:
            return hits[0]
        if not hits:
            raise MergeError(f"unknown channel {channel!r}")
        raise MergeError(f"channel {channel!r} exists on several nodes: {sorted(hits)}")

    @property
    def traces(self) -> dict[int, TupleTrace]:
        if self._traces is None:
            out: dict[int, TupleTrace] = {}
            for name in sorted(self.channels):
                c = self.channels[name]
                walls = c.wall_ns.tolist() if c.wall_ns is not None else [None] * len(c.tuple_ids)
                for tid, t, w in zip(c.tuple_ids.tolist(), c.ticks.tolist(), walls):
                    tr = out.get(tid)
                    if tr is None:
                        tr = out[tid] = TupleTrace(tid)
                    tr.records.append(TraceRecord(name, c.node, t, w))
            self._traces = out
        return self._traces

    def pair_durations(self, from_channel: str, to_channel: str) -> tuple[list[TraceDuration], list[dict]]:
        """Durations for every tuple seen on both channels, plus per-trace errors."""
        a = self.channels[self.resolve(from_channel)]
        b = self.channels[self.resolve(to_channel)]
        common, ia, ib = np.intersect1d(a.tuple_ids, b.tuple_ids, assume_unique=True, return_indices=True)
        others = {c.node for c in self.channels.values()} - {a.node}
        out, errors = [], []
        traces = self.traces if a.node == b.node and others else None
        for tid, i, j in zip(common.tolist(), ia.tolist(), ib.tolist()):
            rx = TraceRecord(a.name, a.node, int(a.ticks[i]))
            ry = TraceRecord(b.name, b.node, int(b.ticks[j]))
            try:
                d = _duration(tid, rx, ry, self.clocks)
            except MergeError as exc:
                errors.append({"tuple_id": tid, "from": a.name, "to": b.name, "error": str(exc)})
                continue
            if traces is not None and len(traces[tid].nodes) > 1:
                d = TraceDuration(d.tuple_id, d.duration, d.locality, True)
            out.append(d)
        return out, errors


def _duration(tid: int, rx: TraceRecord, ry: TraceRecord, clocks: ClockContext) -> TraceDuration:
    if rx.node == ry.node:
        dt = ry.ticks - rx.ticks
        if dt < 0:
            raise TraceDataError(f"negative local duration ({dt} ticks) on node {rx.node}")
        return TraceDuration(tid, MeasuredDuration.from_ticks(float(dt), 0.0, clocks.freq(rx.node)), "local")
    return TraceDuration(tid, clocks.cross_node(rx.node, rx.ticks, ry.node, ry.ticks), "remote")


def trace_duration(trace: TupleTrace, from_channel: str, to_channel: str, clocks: ClockContext) -> TraceDuration:
    rx, ry = trace.get(from_channel), trace.get(to_channel)
    if rx is None or ry is None:
        missing = from_channel if rx is None else to_channel
        raise MergeError(f"tuple {trace.tuple_id} has no record on {missing!r}")
    d = _duration(trace.tuple_id, rx, ry, clocks)
    if d.locality == "local" and len(trace.nodes) > 1:
        d = TraceDuration(d.tuple_id, d.duration, d.locality, True)
    return d


def find_sinks(logs_dir: str | os.PathLike) -> list[tuple[str, Path]]:
    """(node id, path) for every sink under ``logs_dir``."""
    root = Path(logs_dir)
    out = [(LOCAL_NODE, p) for p in sorted(root.glob("*" + SINK_SUFFIX))]
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        out.extend((d.name, p) for p in sorted(d.glob("*" + SINK_SUFFIX)))
    return out


def channel_log(node: str, sink: Sink) -> ChannelLog:
    h = sink.header
    fmt = DataFormat(h.data_format)
    ids = sink.column("tuple_id")
    ticks_col = "wall_ns" if fmt == DataFormat.WALL_NS else "ticks"
    ticks = sink.column(ticks_col).astype(np.int64)
    wall = sink.column("wall_ns").astype(np.int64) if fmt == DataFormat.TSC_PAIR else None
    # keep the first record per tuple id
    uniq, first = np.unique(ids, return_index=True)
    first.sort()
    dup = len(ids) - len(uniq)
    return ChannelLog(
        f"{node}/{h.name}",
        node,
        h.name,
        fmt,
        HandlerKind(h.handler_kind),
        ids[first].astype(np.int64),
        ticks[first],
        wall[first] if wall is not None else None,
        dup,
    )


def tsc_frequency(log: ChannelLog) -> CounterFrequency | None:
    """Calibrate from the earliest and latest (wall, ticks) pairs of a tsc_pair sink."""
    if log.wall_ns is None or len(log.ticks) < 2:
        return None
    i, j = int(np.argmin(log.ticks)), int(np.argmax(log.ticks))
    try:
        return calibrate_frequency(
            ClockSample(int(log.wall_ns[i]), int(log.ticks[i])), ClockSample(int(log.wall_ns[j]), int(log.ticks[j]))
        )
    except ValueError:
        return None


def _pick_ref(relations: Mapping[tuple[str, str], ClockRelation]) -> str | None:
    refs = {r.ref_node for r in relations.values() if r.ref_node is not None}
    if len(refs) == 1:
        return refs.pop()
    nodes = {n for pair in relations for n in pair}
    return min(nodes, key=node_sort_key) if nodes else None


def merge_logs(
    sinks: Iterable[tuple[str, str | os.PathLike]] | str | os.PathLike,
    relations: Iterable[str | os.PathLike] | Mapping[tuple[str, str], ClockRelation] | str | os.PathLike = (),
    freqs: Mapping[str, CounterFrequency] | None = None,
    strict: bool = False,
) -> TraceSet:
    """Decode sinks and relations into a joinable trace set.

    ``sinks`` is a logs directory or (node, path) pairs; ``relations`` a
    directory, file paths, or an already-loaded mapping. Node frequencies come
    from ``freqs``, then from relations the node probed from, then from
    relations probing it, then from its tsc_pair sinks; wall_ns channels count
    in nanoseconds.
    """
    if isinstance(sinks, (str, os.PathLike)):
        sinks = find_sinks(sinks)
    if isinstance(relations, (str, os.PathLike)):
        relations = sorted(Path(relations).glob("rel_*.json"))
    if not isinstance(relations, Mapping):
        relations = load_relations(relations)
    rels = dict(relations)

    channels: dict[str, ChannelLog] = {}
    skipped: list[str] = []
    ret: list[tuple[str, Sink]] = []
    for node, path in sinks:
        sink = read_sink(path, strict=strict)
        kind = HandlerKind(sink.header.handler_kind)
        if kind == HandlerKind.RET_START:
            ret.append((str(node), sink))
            continue
        if kind not in _TRACE_KINDS:
            skipped.append(str(path))
            continue
        log = channel_log(str(node), sink)
        if log.name in channels:
            raise MergeError(f"channel {log.name} appears twice")
        channels[log.name] = log

    clocks = ClockContext(rels, {}, _pick_ref(rels))
    for (local, _), rel in sorted(rels.items()):
        clocks.freqs.setdefault(local, rel.ref_freq)
    # a node never probed from: remote ticks per local tick times the local rate
    for (_, remote), rel in sorted(rels.items()):
        clocks.freqs.setdefault(remote, CounterFrequency(rel.ref_freq.hz * rel.ratio))
    for log in channels.values():
        if log.node in clocks.freqs:
            continue
        if log.data_format == DataFormat.WALL_NS:
            clocks.freqs[log.node] = CounterFrequency(1e9)
        elif (f := tsc_frequency(log)) is not None:
            clocks.freqs[log.node] = f
    if freqs:
        clocks.freqs.update(freqs)
    return TraceSet(channels, clocks, skipped, ret)
