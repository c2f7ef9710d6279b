"""Per-second error bounds of three synchronization approaches, side by side.

* CP: the relation's uncertainty, a single number for the whole run: the
  larger of its two half-MinRTTs, which bounds every interpolated conversion.
* ReT: running maximum round trip seen so far on that node.
* NTP: ``|theta| + E + delta / 2`` for each status row.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..coretime import CounterFrequency
from ..relation import ClockRelation, NtpStatus, ntp_error_bound, ntp_interval

NTP_COLUMNS = ("epoch_s", "theta_s", "root_dispersion_s", "root_delay_s")


@dataclass(frozen=True)
class NtpRow:
    epoch_s: float
    node: str
    status: NtpStatus


def read_ntp_csv(path: str | os.PathLike, default_node: str = "ntp") -> list[NtpRow]:
    """chronyc-style samples; an optional ``node`` column assigns rows to nodes."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in NTP_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing NTP columns {missing}")
        rows = []
        for r in reader:
            rows.append(
                NtpRow(
                    float(r["epoch_s"]),
                    r.get("node") or default_node,
                    NtpStatus(float(r["theta_s"]), float(r["root_dispersion_s"]), float(r["root_delay_s"])),
                )
            )
    return rows


def cp_bound_ns(rel: ClockRelation) -> float:
    return rel.ref_freq.ticks_to_ns(max(rel.est_j.uncertainty, rel.est_m.uncertainty))


@dataclass(frozen=True)
class RetLog:
    node: str
    t1: np.ndarray  # ticks
    t3: np.ndarray
    freq: CounterFrequency


def ret_running_max(log: RetLog) -> dict[int, float]:
    """Second index (from the first probe) -> largest RTT in ns seen up to then."""
    ok = log.t3 >= log.t1
    t1, t3 = log.t1[ok].astype(np.float64), log.t3[ok].astype(np.float64)
    if t1.size == 0:
        return {}
    order = np.argsort(t1, kind="stable")
    t1, rtt = t1[order], (t3 - t1)[order]
    sec = np.floor((t1 - t1[0]) / log.freq.hz).astype(np.int64)
    run = np.maximum.accumulate(rtt)
    out = {}
    for s, r in zip(sec.tolist(), run.tolist()):
        out[s] = r  # the last entry of each second holds the running max at its end
    last = 0.0
    filled = {}
    for s in range(sec[-1] + 1):
        last = out.get(s, last)
        filled[s] = log.freq.ticks_to_ns(last)
    return filled


@dataclass
class ErrorBoundReport:
    rows: list[dict] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        """Per-node means of each bound column (ns), and the ReT/CP ratio."""
        out: dict[str, dict] = {}
        for node in sorted({r["node"] for r in self.rows}):
            rs = [r for r in self.rows if r["node"] == node]
            d = {}
            for col in ("cp_bound_ns", "ret_bound_ns", "ntp_bound_ns"):
                vals = [r[col] for r in rs if r.get(col) is not None]
                if vals:
                    d[col.replace("_bound_ns", "_mean_ns")] = sum(vals) / len(vals)
                    d[col.replace("_bound_ns", "_max_ns")] = max(vals)
            if d.get("cp_mean_ns") and "ret_max_ns" in d:
                d["ret_over_cp"] = d["ret_max_ns"] / d["cp_mean_ns"]
            out[node] = d
        return out


def compare_error_bounds(
    relations: Mapping[tuple[str, str], ClockRelation] | None = None,
    ret_logs: Iterable[RetLog] = (),
    ntp_rows: Iterable[NtpRow] = (),
    ref_node: str | None = None,
    seconds: int | None = None,
) -> ErrorBoundReport:
    """One row per second per node with whichever bounds have inputs."""
    rep = ErrorBoundReport()
    relations = relations or {}
    ret_logs = list(ret_logs)
    ntp_rows = list(ntp_rows)

    cp: dict[str, float] = {}
    if relations:
        if ref_node is None:
            refs = {r.ref_node for r in relations.values() if r.ref_node is not None}
            ref_node = refs.pop() if len(refs) == 1 else None
        for (a, b), rel in sorted(relations.items()):
            if ref_node is None or a == ref_node:
                cp[b] = max(cp.get(b, 0.0), cp_bound_ns(rel))
    else:
        rep.notices.append("no relation files: CP column omitted")

    ret: dict[str, dict[int, float]] = {}
    for log in ret_logs:
        ret[log.node] = ret_running_max(log)
    if not ret_logs:
        rep.notices.append("no ReT records: ReT column omitted")

    ntp: dict[str, dict[int, NtpRow]] = {}
    if ntp_rows:
        t0 = min(r.epoch_s for r in ntp_rows)
        for r in ntp_rows:
            ntp.setdefault(r.node, {})[int(math.floor(r.epoch_s - t0))] = r
    else:
        rep.notices.append("no NTP samples: NTP column omitted")

    if seconds is None:
        spans = [max(d) + 1 for d in list(ret.values()) + list(ntp.values()) if d]
        seconds = max(spans) if spans else 1
    rep.columns = ["second", "node"]
    if cp:
        rep.columns.append("cp_bound_ns")
    if ret:
        rep.columns.append("ret_bound_ns")
    if ntp:
        rep.columns += ["ntp_bound_s", "ntp_bound_ns", "ntp_excludes_zero"]

    nodes = sorted(set(cp) | set(ret) | set(ntp))
    for s in range(seconds):
        for node in nodes:
            row: dict = {"second": s, "node": node}
            if cp:
                row["cp_bound_ns"] = cp.get(node)
            if ret:
                row["ret_bound_ns"] = ret.get(node, {}).get(s)
            if ntp:
                r = ntp.get(node, {}).get(s)
                if r is None:
                    row.update(ntp_bound_s=None, ntp_bound_ns=None, ntp_excludes_zero=None)
                else:
                    b = ntp_error_bound(r.status)
                    lo, hi = ntp_interval(r.status)
                    row.update(ntp_bound_s=b, ntp_bound_ns=b * 1e9, ntp_excludes_zero=lo > 0 or hi < 0)
            rep.rows.append(row)
    return rep
