"""``dg-send``, ``dg-recv`` and ``dg-search``."""

import argparse
import json
import logging
import signal
import sys
import threading

from .emission import DEFAULT_PAYLOAD, EmissionPlan, NullTransport, PlanError, TcpTransport, measure_send_overhead, run_sender
from .wire import encode_uniform_bucket
from .jof import ControlServer, Receiver, control_request
from .search import BelowFloorError, evaluate_max_throughput, tcp_trial


def _payload(size: int) -> bytes:
    return (DEFAULT_PAYLOAD * (size // len(DEFAULT_PAYLOAD) + 1))[:size]


def send_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="dg-send", description="rate-controlled tuple sender")
    p.add_argument("--rate", type=float, required=True, help="tuples per second (all threads)")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--budget-ns", type=float, default=None, help="send window before each due time")
    p.add_argument("--peer", default=None, help="receiver data address; omit for a null transport")
    p.add_argument("--control", default=None, help="receiver control address, to compare counts")
    p.add_argument("--bucket", type=int, default=1, help="tuples per send")
    p.add_argument("--tuple-size", type=int, default=len(DEFAULT_PAYLOAD))
    p.add_argument("--yield-ns", type=int, default=0, help="sleep while the window is further away than this")
    args = p.parse_args(argv)

    try:
        plan = EmissionPlan(args.rate, args.duration, args.budget_ns, args.threads, _payload(args.tuple_size), args.bucket)
    except PlanError as exc:
        p.error(str(exc))
    factory = (lambda: TcpTransport(args.peer)) if args.peer else NullTransport
    if args.control:
        control_request(args.control, "reset")
    probe = factory()
    n_probe = 1000 if args.peer else 100_000
    overhead = measure_send_overhead(probe.send, encode_uniform_bucket(plan.payload, args.bucket), n=n_probe)
    probe.close()
    try:
        plan.check_overhead(overhead)
    except PlanError as exc:
        print(f"dg-send: {exc}", file=sys.stderr)
        return 2
    if args.control:
        # let the probe traffic drain before the real run
        control_request(args.control, "wait", sent=n_probe * args.bucket, timeout=30)
        control_request(args.control, "reset")
    res = run_sender(plan, factory, yield_ns=args.yield_ns)
    out = {
        "sent": res.sent,
        "elapsed_s": res.elapsed_s,
        "achieved_rate": res.achieved_rate,
        "deadline_misses": res.misses,
        "max_late_ns": max((s.max_late_ns for s in res.threads), default=0),
        "send_overhead_ns": overhead,
    }
    if args.control:
        counts = control_request(args.control, "wait", sent=res.sent, timeout=args.duration + 30)
        out.update(ingested=counts["ingested"], dropped=counts["dropped"])
    print(json.dumps(out))
    return 0 if out.get("dropped", 0) == 0 else 1


def recv_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="dg-recv", description="bucketed receiver with deserialization offload")
    p.add_argument("--bind", required=True)
    p.add_argument("--control", default=None, help="address for counter queries")
    p.add_argument("--threads", type=int, default=1, help="expected sender connections")
    p.add_argument("--bucket", type=int, default=1024, help="largest bucket accepted")
    p.add_argument("--queue-cap", type=int, default=64, help="buckets per queue")
    p.add_argument("--work", type=int, default=0, help="deserialization cost: checksum passes per tuple")
    p.add_argument("--duration", type=float, default=None, help="exit after this many seconds")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO)

    recv = Receiver(args.bind, args.threads, args.queue_cap, args.bucket, args.work).start()
    ctl = ControlServer(args.control, recv).start() if args.control else None
    logging.info("receiving on %s%s", recv.addr, f", control on {ctl.addr}" if ctl else "")
    done = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: done.set())
    try:
        done.wait(args.duration)
    except KeyboardInterrupt:
        pass
    if ctl:
        ctl.stop()
    recv.stop()
    print(json.dumps(recv.counts()))
    return 0


def search_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="dg-search", description="find the maximum sustainable throughput")
    p.add_argument("--start", type=float, required=True, help="first rate, tuples/s")
    p.add_argument("--factor", type=float, default=1.5)
    p.add_argument("--refine", type=float, default=0.02, help="stop bisecting below this relative gap")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--max-runs", type=int, default=20)
    p.add_argument("--peer", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--bucket", type=int, default=1024)
    p.add_argument("--tuple-size", type=int, default=len(DEFAULT_PAYLOAD))
    p.add_argument("--budget-ns", type=float, default=None)
    p.add_argument("--yield-ns", type=int, default=200_000)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    trial = tcp_trial(
        args.peer, args.control, args.threads, args.bucket, _payload(args.tuple_size), args.budget_ns, yield_ns=args.yield_ns
    )
    try:
        res = evaluate_max_throughput(trial, args.duration, args.start, args.factor, args.refine, args.max_runs)
    except BelowFloorError as exc:
        print(f"dg-search: {exc}", file=sys.stderr)
        return 1
    for r in res.runs:
        print(json.dumps({"rate": r.rate, "sent": r.sent, "ingested": r.ingested, "achieved_rate": r.achieved_rate,
                          "sustained": r.sustained}))
    print(json.dumps({"max_sustainable_rate": res.rate, "runs": len(res.runs), "reason": res.reason}))
    return 0
