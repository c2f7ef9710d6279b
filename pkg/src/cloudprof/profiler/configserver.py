"""Online handler configuration.

Mapping file: one ``<channel-name> <KIND> [params...]`` per line, ``#`` starts
a comment. Wire protocol, one line each way::

    GET spout_in\\n   ->   XOY 2 1024\\n
    GET unknown\\n    ->   NULL\\n
    bogus\\n          ->   ERR <reason>\\n
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from ..minrtt.wire import parse_addr
from .spec import HandlerSpec, SpecError

log = logging.getLogger(__name__)


class ConfigServerError(OSError):
    pass


def parse_mapping(text: str) -> dict[str, HandlerSpec]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, rest = line.partition(" ")
        try:
            out[name] = HandlerSpec.parse(rest)
        except SpecError as exc:
            raise SpecError(f"line {lineno}: {exc}") from None
    return out


def load_mapping(path) -> dict[str, HandlerSpec]:
    with open(path, encoding="utf-8") as f:
        return parse_mapping(f.read())


def reply_for(line: str, mapping: dict[str, HandlerSpec]) -> str:
    words = line.split()
    if len(words) != 2 or words[0] != "GET":
        return "ERR expected 'GET <channel-name>'"
    spec = mapping.get(words[1])
    return spec.to_line() if spec is not None else "NULL"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError:
                line = ""
            self.wfile.write((reply_for(line, self.server.mapping) + "\n").encode())


class ConfigServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bind: str | tuple[str, int], mapping: dict[str, HandlerSpec]):
        if isinstance(bind, str):
            bind = parse_addr(bind)
        self.mapping = dict(mapping)
        super().__init__(bind, _Handler)

    @property
    def addr(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "ConfigServer":
        threading.Thread(target=self.serve_forever, name="cplg-config", daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def config_server_serve(bind: str, mapping_file) -> ConfigServer:
    return ConfigServer(bind, load_mapping(mapping_file))


def query(addr: str, line: str, timeout: float = 2.0) -> str:
    try:
        with socket.create_connection(parse_addr(addr), timeout=timeout) as sock:
            sock.sendall(line.encode() + b"\n")
            with sock.makefile("rb") as f:
                reply = f.readline()
    except OSError as exc:
        raise ConfigServerError(f"configuration server {addr} unreachable: {exc}") from exc
    if not reply.endswith(b"\n"):
        raise ConfigServerError("configuration server closed the connection mid-reply")
    return reply.decode().rstrip("\n")


def resolve_handler(addr: str, name: str, timeout: float = 2.0) -> HandlerSpec:
    if not name or any(c.isspace() for c in name):
        raise ValueError(f"channel names cannot contain whitespace: {name!r}")
    reply = query(addr, f"GET {name}", timeout)
    if reply.startswith("ERR"):
        raise ConfigServerError(reply)
    return HandlerSpec.parse(reply)
