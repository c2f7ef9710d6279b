"""``cp-analyze``: durations, boxplot statistics and error-bound comparison.

Writes into ``--out``:

* ``durations_<from>__<to>.csv``: tuple_id, locality, multi_node, best_ns, uncertainty_ns
* ``stats.csv``: one row per (pair, locality) group, gnuplot-ready columns
* ``hist_<from>__<to>_<locality>.csv``: raw histogram columns
* ``trace_errors.csv``: tuples excluded from a pair, with the reason
* ``error_bounds.csv``: per second, per node CP / ReT / NTP bounds
* ``summary.json``: all of the above in one document
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from ..coretime import CounterFrequency
from .bounds import RetLog, compare_error_bounds, read_ntp_csv
from .merge import MergeError, merge_logs
from .stats import STATS_COLUMNS, histogram, stats, stats_row


def _safe(name: str) -> str:
    return name.replace("/", "_")


def _parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for item in filter(None, (p.strip() for p in text.split(","))):
        src, sep, dst = item.partition(":")
        if not sep or not src or not dst:
            raise argparse.ArgumentTypeError(f"bad pair {item!r}; expected from:to")
        pairs.append((src, dst))
    return pairs


def _parse_freq(text: str) -> tuple[str, CounterFrequency]:
    node, sep, hz = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"bad frequency {text!r}; expected node=hz")
    return node, CounterFrequency(float(hz))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def analyze(
    logs: str,
    out: str,
    relations: str | None = None,
    pairs: list[tuple[str, str]] = (),
    ntp: str | None = None,
    freqs: dict | None = None,
    strict: bool = False,
    bins: int = 50,
) -> dict:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = merge_logs(logs, relations or (), freqs, strict=strict)
    summary: dict = {
        "channels": {k: {"node": c.node, "records": int(len(c.tuple_ids)), "duplicates": c.duplicates}
                     for k, c in sorted(ts.channels.items())},
        "reference_node": ts.clocks.ref_node,
        "groups": [],
        "trace_errors": 0,
        "notices": [],
    }
    stat_rows = []
    all_errors = []
    for src, dst in pairs:
        label = f"{src}->{dst}"
        durs, errors = ts.pair_durations(src, dst)
        all_errors += errors
        tag = f"{_safe(src)}__{_safe(dst)}"
        _write_csv(
            out_dir / f"durations_{tag}.csv",
            ("tuple_id", "locality", "multi_node", "best_ns", "uncertainty_ns"),
            ((d.tuple_id, d.locality, int(d.multi_node), repr(d.duration.best_ns), repr(d.duration.uncertainty_ns))
             for d in durs),
        )
        for loc in ("remote", "local"):
            group = [d for d in durs if d.locality == loc]
            if not group:
                continue
            best = [d.duration.best_ns for d in group]
            s = stats(best, label, loc)
            stat_rows.append(stats_row(s))
            entry = s.to_dict()
            entry["outliers"] = len(s.outliers)
            entry["max_uncertainty_ns"] = max(d.duration.uncertainty_ns for d in group)
            entry["multi_node"] = sum(d.multi_node for d in group)
            summary["groups"].append(entry)
            _write_csv(out_dir / f"hist_{tag}_{loc}.csv", ("left_ns", "right_ns", "count"), histogram(best, bins))
        if not durs:
            summary["notices"].append(f"{label}: no tuple appears on both channels")
    _write_csv(out_dir / "stats.csv", STATS_COLUMNS, stat_rows)
    _write_csv(
        out_dir / "trace_errors.csv",
        ("tuple_id", "from", "to", "error"),
        ((e["tuple_id"], e["from"], e["to"], e["error"]) for e in all_errors),
    )
    summary["trace_errors"] = len(all_errors)

    ret_logs = []
    for node, sink in ts.ret:
        try:
            ret_logs.append(RetLog(node, sink.column("t1"), sink.column("t3"), ts.clocks.freq(node)))
        except MergeError as exc:
            summary["notices"].append(f"ReT sink on {node} skipped: {exc}")
    ntp_rows = read_ntp_csv(ntp) if ntp else []
    rels = ts.clocks.relations
    if rels or ret_logs or ntp_rows:
        rep = compare_error_bounds(rels, ret_logs, ntp_rows, ts.clocks.ref_node)
        _write_csv(
            out_dir / "error_bounds.csv",
            rep.columns,
            ([("" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])) for c in rep.columns]
             for r in rep.rows),
        )
        summary["error_bounds"] = rep.summary()
        summary["notices"] += rep.notices
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="cp-analyze", description="post-mortem latency and clock-error analysis")
    p.add_argument("--logs", required=True, help="sink directory, one subdirectory per node")
    p.add_argument("--relations", help="directory of relation files")
    p.add_argument("--pairs", type=_parse_pairs, default=[], help="from:to channel pairs, comma separated")
    p.add_argument("--ntp", help="chronyc-style CSV: epoch_s,theta_s,root_dispersion_s,root_delay_s[,node]")
    p.add_argument("--out", required=True)
    p.add_argument("--freq", type=_parse_freq, action="append", default=[], metavar="NODE=HZ",
                   help="counter frequency override")
    p.add_argument("--strict", action="store_true", help="fail on a torn final frame instead of ignoring it")
    p.add_argument("--bins", type=int, default=50)
    args = p.parse_args(argv)
    if not os.path.isdir(args.logs):
        p.error(f"{args.logs}: not a directory")
    try:
        summary = analyze(args.logs, args.out, args.relations, args.pairs, args.ntp, dict(args.freq), args.strict, args.bins)
    except (MergeError, ValueError, OSError) as exc:
        print(f"cp-analyze: {exc}", file=sys.stderr)
        return 1
    for g in summary["groups"]:
        print(f"{g['group']} [{g['locality']}] n={g['count']} median={g['median']:.1f} ns "
              f"q1={g['q1']:.1f} q3={g['q3']:.1f} max_unc={g['max_uncertainty_ns']:.1f} ns")
    for n in summary["notices"]:
        print(f"note: {n}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
