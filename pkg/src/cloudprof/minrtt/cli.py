"""``cp-minrtt slave ...`` / ``cp-minrtt master ...``"""

import argparse
import logging
import sys

from .. import coretime
from .master import RemoteNode, SessionError, master_measure
from .slave import Slave


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cp-minrtt", description="MinRTT clock-relation measurement")
    sub = p.add_subparsers(dest="role", required=True)

    s = sub.add_parser("slave", help="answer probes on this node")
    s.add_argument("--bind", required=True, help="host:port to listen on")
    s.add_argument("--node-id", required=True)
    s.add_argument("--clock-source", choices=["auto", "tsc", "monotonic"], default="auto")

    m = sub.add_parser("master", help="measure every node pair and write relation files")
    m.add_argument("--nodes", required=True, help="comma-separated slave addresses")
    m.add_argument("--iterations", type=int, default=100)
    m.add_argument("--spacing-secs", type=float, default=10.0)
    m.add_argument("--ref-node", default=None)
    m.add_argument("--timeout", type=float, default=1.0, help="per-probe timeout in seconds")
    m.add_argument("--out", required=True, help="directory for rel_<src>_<dst>.json files")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.role == "slave":
        coretime.set_source(coretime.select_source(args.clock_source))
        slave = Slave(args.bind, args.node_id)
        logging.info("slave %s listening on %s (%s)", args.node_id, slave.addr, slave.source.name)
        try:
            slave.serve_forever()
        except KeyboardInterrupt:
            pass
        return 0

    nodes = [RemoteNode(a.strip(), timeout=args.timeout) for a in args.nodes.split(",") if a.strip()]
    try:
        res = master_measure(nodes, args.iterations, args.spacing_secs, args.ref_node, args.out)
    except SessionError as exc:
        print(f"session error: {exc}", file=sys.stderr)
        return 2
    finally:
        for n in nodes:
            n.close()
    for (a, b), rel in sorted(res.relations.items()):
        print(f"{a}->{b} ratio={rel.ratio:.12f} minrtt_ns=({rel.m1.rtt_ns:.0f}, {rel.m2.rtt_ns:.0f}) f={rel.ref_freq.hz:.6f}")
    for (a, b), msg in sorted(res.errors.items()):
        print(f"{a}->{b} FAILED {msg}", file=sys.stderr)
    return 0 if res.complete else 1


if __name__ == "__main__":
    sys.exit(main())
