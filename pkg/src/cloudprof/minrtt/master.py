"""Orchestrator: MinRTT measurements for every ordered node pair, twice."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Protocol, Sequence

from ..relation import ClockRelation, MinRttMeasurement, make_relation, relation_filename, write_relation_file
from .probe import MeasurementFailed, TcpLink
from .wire import Frame, MsgType, connect, json_frame

log = logging.getLogger(__name__)


class SessionError(RuntimeError):
    pass


class NodeHandle(Protocol):
    node_id: str

    def info(self) -> dict: ...

    def minrtt(self, peer: "NodeHandle", iterations: int) -> MinRttMeasurement: ...


class RemoteNode:
    """A slave reached over the network."""

    def __init__(self, addr: str, timeout: float = 1.0):
        self.addr = addr
        self.timeout = timeout
        self._link = TcpLink(connect(addr))
        self._seq = 0
        self.node_id = str(self.info()["node_id"])

    def _call(self, frame_type: int, body=None, timeout: float = 10.0) -> Frame:
        self._seq += 1
        req = Frame(frame_type, self._seq) if body is None else json_frame(frame_type, self._seq, body)
        return self._link.request(req, timeout)

    def info(self) -> dict:
        return self._call(MsgType.REGISTER).json()

    def minrtt(self, peer: "RemoteNode", iterations: int) -> MinRttMeasurement:
        body = {"peer": peer.addr, "peer_id": peer.node_id, "iterations": iterations, "timeout": self.timeout}
        reply = self._call(MsgType.MEASURE_CMD, body, timeout=iterations * self.timeout + 10).json()
        if not reply.get("ok"):
            raise MeasurementFailed(reply.get("error", "unknown error"))
        return MinRttMeasurement.from_dict(reply["measurement"])

    def close(self) -> None:
        self._link.close()


@dataclass
class SessionResult:
    ref_node: str
    relations: dict[tuple[str, str], ClockRelation] = field(default_factory=dict)
    errors: dict[tuple[str, str], str] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.errors


def node_sort_key(node_id: str):
    return (0, int(node_id), "") if node_id.isdigit() else (1, 0, node_id)


def master_measure(
    nodes: Sequence[NodeHandle],
    iterations: int = 100,
    spacing_s: float = 10.0,
    ref_node: str | None = None,
    out_dir: str | os.PathLike | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> SessionResult:
    """Measure m1 for all ordered pairs, wait ``spacing_s``, measure m2, build relations.

    Each relation's frequency is calibrated from its probing node's own clock
    samples (first probe start of m1 to last probe end of m2).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    by_id = {}
    for n in nodes:
        try:
            meta = n.info()
        except OSError as exc:
            raise SessionError(f"node {getattr(n, 'node_id', '?')} not registered: {exc}") from exc
        if str(meta.get("node_id")) != n.node_id:
            raise SessionError(f"node id mismatch: {meta.get('node_id')!r} vs {n.node_id!r}")
        by_id[n.node_id] = n
    if len(by_id) < 2:
        raise SessionError("need at least two nodes")
    if ref_node is None:
        ref_node = min(by_id, key=node_sort_key)
    elif ref_node not in by_id:
        raise SessionError(f"reference node {ref_node!r} is not registered")

    pairs = list(permutations(sorted(by_id, key=node_sort_key), 2))
    result = SessionResult(ref_node)
    first: dict[tuple[str, str], MinRttMeasurement] = {}
    for a, b in pairs:
        try:
            first[(a, b)] = by_id[a].minrtt(by_id[b], iterations)
        except (OSError, MeasurementFailed) as exc:
            result.errors[(a, b)] = f"m1: {exc}"
    sleep(spacing_s)
    for a, b in pairs:
        if (a, b) not in first:
            continue
        try:
            m2 = by_id[a].minrtt(by_id[b], iterations)
            rel = make_relation(first[(a, b)], m2, ref_node=ref_node)
        except (OSError, MeasurementFailed, ValueError) as exc:
            result.errors[(a, b)] = f"m2: {exc}"
            continue
        f = rel.ref_freq
        rel = dataclasses.replace(
            rel,
            m1=dataclasses.replace(rel.m1, rtt_ns=f.ticks_to_ns(rel.m1.rtt_ticks)),
            m2=dataclasses.replace(rel.m2, rtt_ns=f.ticks_to_ns(rel.m2.rtt_ticks)),
        )
        result.relations[(a, b)] = rel

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for key in pairs:
            if key in result.relations:
                result.files.append(write_relation_file(result.relations[key], out_dir))
        summary = {
            "ref_node": ref_node,
            "iterations": iterations,
            "spacing_s": spacing_s,
            "relations": [relation_filename(a, b) for a, b in pairs if (a, b) in result.relations],
            "errors": {f"{a}->{b}": msg for (a, b), msg in sorted(result.errors.items())},
        }
        with open(os.path.join(out_dir, "session.json"), "w", encoding="utf-8") as f:
            json.dump(summary, f, sort_keys=True, indent=2)
            f.write("\n")
    for (a, b), msg in result.errors.items():
        log.warning("pair %s->%s failed: %s", a, b, msg)
    return result
