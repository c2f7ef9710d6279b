"""``cp-decode`` and ``cp-config-server``."""

import argparse
import csv
import logging
import sys

from .configserver import config_server_serve
from .sinkfile import PC_TOTAL, SinkFormatError, read_sink
from .spec import HandlerKind


def decode_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="cp-decode", description="dump a channel sink file as CSV")
    p.add_argument("sink")
    p.add_argument("--lenient", action="store_true", help="ignore a torn final frame")
    p.add_argument("--header", action="store_true", help="print the file header to stderr")
    args = p.parse_args(argv)
    try:
        sink = read_sink(args.sink, strict=not args.lenient)
    except (OSError, SinkFormatError) as exc:
        print(f"cp-decode: {exc}", file=sys.stderr)
        return 1
    h = sink.header
    if args.header:
        print(
            f"channel={h.name} handler={h.handler_kind.name} format={h.data_format.name} "
            f"codec={h.codec.name} frames={sink.frames} records={len(sink)}",
            file=sys.stderr,
        )
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(h.columns)
    counter = h.handler_kind in (HandlerKind.SPC, HandlerKind.MPC)
    for row in sink.records.tolist():
        if counter and row[0] == PC_TOTAL:
            out.writerow(["total", row[1]])
        else:
            out.writerow(row)
    return 0


def config_server_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="cp-config-server", description="serve channel handler assignments")
    p.add_argument("--bind", required=True, help="host:port")
    p.add_argument("--map", required=True, help="mapping file: '<channel> <KIND> [params]' per line")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    server = config_server_serve(args.bind, args.map)
    logging.info("serving %d channel mappings on %s", len(server.mapping), server.addr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(decode_main())
