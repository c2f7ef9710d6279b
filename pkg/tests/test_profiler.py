import json
import random
import signal
import socket
import struct
import subprocess
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cloudprof.coretime import CounterFrequency, LinearSource
from cloudprof.profiler import (
    FROM_CONFIG_SERVER,
    PC_TOTAL,
    ChannelError,
    Codec,
    ConfigServer,
    ConfigServerError,
    DataFormat,
    HandlerKind,
    HandlerSpec,
    NoDataError,
    Profiler,
    SinkFormatError,
    SinkWriteError,
    SpecError,
    downsample_selects,
    read_sink,
    resolve_handler,
    xoy_selects,
)
from cloudprof.profiler import codecs
from cloudprof.profiler.configserver import parse_mapping, reply_for
from cloudprof.profiler.ret import FakeRetTransport
from cloudprof.profiler.sinkfile import decode_bytes
from cloudprof.relation import ret_duration
from cloudprof.sim import VirtualClock

CHILD = Path(__file__).with_name("profiler_child.py")


@pytest.fixture
def prof(tmp_path):
    p = Profiler(tmp_path, workers=2, capacity=64)
    yield p
    p.shutdown()


def ids_of(path):
    return read_sink(path).column("tuple_id")


# ---- handler descriptions ------------------------------------------------------

def test_spec_validation():
    with pytest.raises(SpecError):
        HandlerSpec.downsample(0)
    with pytest.raises(SpecError):
        HandlerSpec.xoy(3, 2)
    with pytest.raises(SpecError):
        HandlerSpec.xoy(0, 0)
    with pytest.raises(SpecError):
        HandlerSpec.spc(0)
    with pytest.raises(SpecError):
        HandlerSpec.parse("FROBNICATE 3")
    with pytest.raises(SpecError):
        HandlerSpec.parse("NULL 3")


specs = st.one_of(
    st.just(HandlerSpec.id()),
    st.just(HandlerSpec.null()),
    st.just(HandlerSpec.first_last()),
    st.sampled_from(list(Codec)).map(HandlerSpec.buffered_id),
    st.integers(1, 10**9).map(HandlerSpec.downsample),
    st.integers(1, 10**6).flatmap(lambda y: st.integers(0, y).map(lambda x: HandlerSpec.xoy(x, y))),
    st.floats(1e-3, 1e3).map(HandlerSpec.spc),
    st.floats(1e-3, 1e3).map(HandlerSpec.mpc),
)


@given(specs)
def test_spec_line_round_trip(spec):
    assert HandlerSpec.parse(spec.to_line()) == spec


# ---- selection predicates ------------------------------------------------------

def test_downsample_predicate():
    assert all(downsample_selects(1, i) for i in range(100))
    assert [i for i in range(9) if downsample_selects(3, i)] == [0, 3, 6]
    assert sum(downsample_selects(10**6, i) for i in range(10**6)) == 1


def test_xoy_predicate():
    sel = [i for i in range(2050) if xoy_selects(2, 1024, i)]
    assert sel == [0, 1, 1024, 1025, 2048, 2049]
    assert not any(xoy_selects(0, 7, i) for i in range(100))
    assert all(xoy_selects(7, 7, i) for i in range(100))


# ---- codecs and file format ----------------------------------------------------

@pytest.mark.parametrize("codec", list(Codec))
@pytest.mark.parametrize("nrec", [0, 1, 7, 64])
def test_codec_round_trip_fill_levels(codec, nrec):
    rng = np.random.default_rng(nrec)
    raw = rng.integers(0, 2**63, size=2 * nrec, dtype=np.uint64).tobytes()
    assert codecs.decompress(codec, codecs.compress(codec, raw), len(raw)) == raw


@settings(max_examples=60)
@given(st.sampled_from(list(Codec)), st.binary(max_size=5000))
def test_codec_round_trip_bytes(codec, raw):
    assert codecs.decompress(codec, codecs.compress(codec, raw), len(raw)) == raw


def test_codec_full_capacity_block():
    raw = np.arange(2 * (1 << 20), dtype=np.uint64).tobytes()
    for codec in Codec:
        c = codecs.compress(codec, raw)
        assert codecs.decompress(codec, c, len(raw)) == raw


def test_zstd_payload_is_a_standard_frame():
    assert codecs.compress(Codec.ZSTD, b"abc" * 100)[:4] == bytes.fromhex("28b52ffd")


def test_lzo1x_hand_built_stream():
    # literal run of 12 (first byte 17+12), M3 match length 228 distance 12, end marker
    stream = bytes([17 + 12]) + b"hello world " + bytes([0x20, 228 - 33, 11 << 2, 0x00, 0x11, 0x00, 0x00])
    assert codecs.decompress(Codec.LZO1X, stream, 240) == b"hello world " * 20


def test_lzo1x_rejects_garbage():
    with pytest.raises(codecs.CodecError):
        codecs.decompress(Codec.LZO1X, b"\x00\x00\x00\x00\x00", 100)


def test_sink_header_is_bit_exact(prof, tmp_path):
    ch = prof.open_channel("spout_in", "wall_ns", HandlerSpec.buffered_id("zstd"))
    prof.close_channel(ch)
    data = (tmp_path / "spout_in.cplg").read_bytes()
    assert data == b"CPLG" + bytes([1, 1, 0, 1]) + struct.pack("<I", 8) + b"spout_in"


def test_torn_frame_detection(prof, tmp_path):
    ch = prof.open_channel("c", "wall_ns", HandlerSpec.buffered_id("raw"))
    for i in range(100):
        prof.log_ts(ch, i)
    prof.close_channel(ch)
    data = (tmp_path / "c.cplg").read_bytes()
    with pytest.raises(SinkFormatError):
        decode_bytes(data[:-5])
    sink = decode_bytes(data[:-5], strict=False)
    assert sink.truncated and list(sink.column("tuple_id")) == list(range(64))
    with pytest.raises(SinkFormatError):
        decode_bytes(b"XXXX" + data[4:])


# ---- channel lifecycle -----------------------------------------------------------

def test_open_writes_header_and_rejects_duplicates(prof, tmp_path):
    ch = prof.open_channel("spout_in", "wall_ns", HandlerSpec.id())
    assert (tmp_path / "spout_in.cplg").stat().st_size == 4 + 4 + 4 + len("spout_in")
    with pytest.raises(ChannelError):
        prof.open_channel("spout_in", "wall_ns", HandlerSpec.id())
    prof.close_channel(ch)


def test_unwritable_sink(prof):
    with pytest.raises(OSError):
        prof.open_channel("x", "wall_ns", HandlerSpec.id(), sink_path="/dev/full")
    with pytest.raises(OSError):
        prof.open_channel("y", "wall_ns", HandlerSpec.id(), sink_path="/nonexistent/dir/y.cplg")


def test_close_immediately_gives_empty_sink(prof, tmp_path):
    for kind in ("ID", "BUFFERED_ID LZO1X", "XOY 2 1024", "FIRST_LAST", "NULL"):
        name = kind.split()[0]
        ch = prof.open_channel(name, "wall_ns", kind)
        r = prof.close_channel(ch)
        sink = read_sink(tmp_path / f"{name}.cplg")
        assert len(sink) == 0 and r.committed == 0


def test_id_handler_one_record_per_call(prof, tmp_path):
    ch = prof.open_channel("id", "wall_ns", HandlerSpec.id())
    for i in range(10):
        prof.log_ts(ch, 100 + i)
        assert len(ids_of(tmp_path / "id.cplg")) == i + 1
    prof.close_channel(ch)
    sink = read_sink(tmp_path / "id.cplg")
    assert list(sink.column("tuple_id")) == list(range(100, 110))
    assert np.all(np.diff(sink.column("wall_ns").astype(np.int64)) >= 0)


def test_null_handler_discards(prof, tmp_path):
    ch = prof.open_channel("n", "wall_ns", HandlerSpec.null())
    for i in range(1000):
        prof.log_ts(ch, i)
    assert prof.close_channel(ch).committed == 0
    assert len(read_sink(tmp_path / "n.cplg")) == 0


def test_buffered_three_full_blocks(prof, tmp_path):
    ch = prof.open_channel("b", "wall_ns", HandlerSpec.buffered_id("zstd"))
    for i in range(3 * 64):
        prof.log_ts(ch, i)
    r = prof.close_channel(ch)
    sink = read_sink(tmp_path / "b.cplg")
    assert sink.frames == 3 and r.committed == 3 * 64
    assert list(sink.column("tuple_id")) == list(range(3 * 64))


def test_capacity_plus_one(prof, tmp_path):
    ch = prof.open_channel("b", "wall_ns", HandlerSpec.buffered_id("lzo1x"))
    for i in range(65):
        prof.log_ts(ch, i)
    prof.close_channel(ch)
    sink = read_sink(tmp_path / "b.cplg")
    assert sink.frames == 2 and len(sink) == 65


def test_closed_channel_rejects_and_counts(prof, tmp_path):
    ch = prof.open_channel("c", "wall_ns", HandlerSpec.buffered_id())
    prof.log_ts(ch, 1)
    prof.close_channel(ch)
    for i in range(5):
        prof.log_ts(ch, i)  # must not raise
    assert prof.rejected(ch) == 5
    assert len(read_sink(tmp_path / "c.cplg")) == 1
    assert prof.close_channel(ch).committed == 1  # closing twice is harmless


def test_bad_tuple_id_keeps_block_aligned(prof, tmp_path):
    ch = prof.open_channel("c", "wall_ns", HandlerSpec.buffered_id())
    prof.log_ts(ch, 1)
    with pytest.raises(OverflowError):
        prof.log_ts(ch, -1)
    prof.log_ts(ch, 2)
    prof.close_channel(ch)
    assert list(ids_of(tmp_path / "c.cplg")) == [1, 2]


def test_tsc_pair_and_raw_ticks_formats(tmp_path):
    t = [0]
    src = LinearSource(2.5e9, offset=10**6, base=lambda: t[0])
    p = Profiler(tmp_path, capacity=16, source=src)
    a = p.open_channel("pair", "tsc_pair", HandlerSpec.buffered_id())
    b = p.open_channel("ticks", "raw_ticks", HandlerSpec.id())
    for i in range(40):
        t[0] = 1000 * i
        p.log_ts(a, i)
        p.log_ts(b, i)
    p.shutdown()
    pair = read_sink(tmp_path / "pair.cplg")
    assert pair.header.data_format == DataFormat.TSC_PAIR and pair.records.shape == (40, 3)
    assert list(pair.column("wall_ns")) == [1000 * i for i in range(40)]
    assert list(pair.column("ticks")) == [10**6 + 2500 * i for i in range(40)]
    ticks = read_sink(tmp_path / "ticks.cplg")
    assert ticks.header.columns == ("ticks", "tuple_id")
    assert list(ticks.column("ticks")) == [10**6 + 2500 * i for i in range(40)]


# ---- selection sinks against brute force ---------------------------------------

@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 50), st.integers(0, 50), st.lists(st.integers(0, 10**6), max_size=400))
def test_xoy_sink_matches_predicate(tmp_path_factory, y, x, ids):
    x = min(x, y)
    p = Profiler(tmp_path_factory.mktemp("xoy"), capacity=32)
    ch = p.open_channel("x", "wall_ns", HandlerSpec.xoy(x, y))
    for i in ids:
        p.log_ts(ch, i)
    p.shutdown()
    assert list(ids_of(p.channel(ch).sink_path)) == [i for i in ids if i % y < x]


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.lists(st.integers(0, 10**6), max_size=400))
def test_downsample_sink_matches_call_index(tmp_path_factory, n, ids):
    p = Profiler(tmp_path_factory.mktemp("ds"), capacity=32)
    ch = p.open_channel("d", "wall_ns", HandlerSpec.downsample(n))
    for i in ids:
        p.log_ts(ch, i)
    p.shutdown()
    # keyed on call order, not on the id value
    assert list(ids_of(p.channel(ch).sink_path)) == [v for k, v in enumerate(ids) if k % n == 0]


# ---- first/last ------------------------------------------------------------------

def test_first_last(tmp_path):
    times = iter([10, 20, 15])
    p = Profiler(tmp_path)
    ch = p.open_channel("fl", "wall_ns", HandlerSpec.first_last(), clock=lambda: next(times))
    one = p.open_channel("one", "wall_ns", HandlerSpec.first_last())
    empty = p.open_channel("empty", "wall_ns", HandlerSpec.first_last())
    for tid in (1, 2, 3):
        p.log_ts(ch, tid)
    p.log_ts(one, 9)
    assert p.first_last_result(ch) == ((10, 1), (20, 2))
    f, l = p.first_last_result(one)
    assert f == l
    with pytest.raises(NoDataError):
        p.first_last_result(empty)
    p.shutdown()
    assert read_sink(tmp_path / "fl.cplg").records.tolist() == [[10, 1], [20, 2]]


def test_poison_pill_runtime(tmp_path):
    clock = VirtualClock()
    p = Profiler(tmp_path)
    src = p.open_channel("src_fl", "wall_ns", HandlerSpec.first_last(), clock=lambda: int(clock.t))
    snk = p.open_channel("sink_fl", "wall_ns", HandlerSpec.first_last(), clock=lambda: int(clock.t))
    clock.advance(5_000)
    for i in range(100):
        p.log_ts(src, i)
        clock.advance(100_000)
        p.log_ts(snk, i)
    p.shutdown()
    first = read_sink(tmp_path / "src_fl.cplg").records[0]
    last = read_sink(tmp_path / "sink_fl.cplg").records[1]
    assert int(last[0]) - int(first[0]) == 100 * 100_000


# ---- periodic counters -------------------------------------------------------------

def test_pc_single_period(tmp_path):
    p = Profiler(tmp_path)
    ch = p.open_channel("pc", "wall_ns", HandlerSpec.spc(60.0))
    for i in range(10):
        p.log_ts(ch, i)
    p.close_channel(ch)
    assert p.periodic_counter_sample(ch) == [(0, 10)]
    recs = read_sink(tmp_path / "pc.cplg").records.tolist()
    assert recs == [[0, 10], [PC_TOTAL, 10]]


@pytest.mark.parametrize("kind", ["SPC", "MPC"])
def test_pc_controlled_rate(tmp_path, kind):
    p = Profiler(tmp_path)
    ch = p.open_channel("pc", "wall_ns", HandlerSpec.parse(f"{kind} 3600"))
    h = p.channel(ch).handler
    for _ in range(5):
        for i in range(1000):
            p.log_ts(ch, i)
        h.sample()
    p.close_channel(ch)
    assert p.periodic_counter_sample(ch) == [(k, 1000) for k in range(5)]
    recs = read_sink(tmp_path / "pc.cplg").records
    assert recs[-1].tolist() == [PC_TOTAL, 5000]


def test_pc_real_sampler_conserves(tmp_path):
    p = Profiler(tmp_path)
    ch = p.open_channel("pc", "wall_ns", HandlerSpec.spc(0.02))
    n = 0
    end = time.monotonic() + 0.25
    while time.monotonic() < end:
        p.log_ts(ch, n)
        n += 1
    p.close_channel(ch)
    periods = p.periodic_counter_sample(ch)
    assert len(periods) >= 5
    assert sum(c for _, c in periods) == n
    assert [k for k, _ in periods] == list(range(len(periods)))


def test_mpc_concurrent_writers_conserve(tmp_path):
    p = Profiler(tmp_path)
    ch = p.open_channel("mpc", "wall_ns", HandlerSpec.mpc(0.01))
    log = p.loggers[ch]

    def work():
        for i in range(20000):
            log(i)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    p.close_channel(ch)
    assert sum(c for _, c in p.periodic_counter_sample(ch)) == 80000
    assert read_sink(tmp_path / "mpc.cplg").records[-1].tolist() == [PC_TOTAL, 80000]


def test_spc_single_writer_outpaces_mpc(tmp_path):
    p = Profiler(tmp_path)
    spc = p.loggers[p.open_channel("spc", "wall_ns", HandlerSpec.spc(1.0))]
    mpc = p.loggers[p.open_channel("mpc", "wall_ns", HandlerSpec.mpc(1.0))]
    n = 300_000

    def rate(fn, threads):
        def work():
            for i in range(n // threads):
                fn(i)

        ts = [threading.Thread(target=work) for _ in range(threads)]
        t0 = time.perf_counter()
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        return n / (time.perf_counter() - t0)

    assert max(rate(spc, 1) for _ in range(3)) > max(rate(mpc, 2) for _ in range(3))
    p.shutdown()


# ---- ReT -------------------------------------------------------------------------

def test_ret_fake_transport_rtt(tmp_path):
    clock = VirtualClock()
    stamp = lambda: int(clock.t)
    p = Profiler(tmp_path)
    start = p.open_channel("ret_start", "wall_ns", HandlerSpec.ret_start("none"), clock=stamp)
    h = p.channel(start).handler
    fake = FakeRetTransport(clock, 200_000, h.acknowledge)
    end = p.open_channel("ret_end", "wall_ns", HandlerSpec.ret_end(), clock=stamp, ack_sender=fake.send)
    for i in range(10):
        p.log_ts(start, i)
        clock.advance(200_000)  # tuple travels to the end node
        p.log_ts(end, i)
    p.log_ts(start, 99)  # never acknowledged
    assert h.max_rtt == 400_000
    r = p.close_channel(start)
    p.close_channel(end)
    assert r.unacked == 1 and r.committed == 10
    recs = read_sink(tmp_path / "ret_start.cplg").records
    assert recs.shape == (10, 3)
    assert np.all(recs[:, 2] - recs[:, 1] == 400_000)
    d = ret_duration(int(recs[0, 1]), int(recs[0, 2]), CounterFrequency(1e9), max_rtt_ns=h.max_rtt)
    assert d.uncertainty_ns == 400_000


def test_ret_loopback_pair(tmp_path):
    p = Profiler(tmp_path)
    start = p.open_channel("ret_start", "wall_ns", HandlerSpec.ret_start("127.0.0.1:0"))
    h = p.channel(start).handler
    end = p.open_channel("ret_end", "wall_ns", HandlerSpec.ret_end(h.addr))
    for i in range(100):
        p.log_ts(start, i)
        p.log_ts(end, i)
    deadline = time.monotonic() + 5
    while h.acked < 100 and time.monotonic() < deadline:
        time.sleep(0.01)
    p.close_channel(end)
    r = p.close_channel(start)
    assert r.committed == 100 and r.unacked == 0
    recs = read_sink(tmp_path / "ret_start.cplg").records
    assert sorted(recs[:, 0].tolist()) == list(range(100))
    assert np.all(recs[:, 2] > recs[:, 1])


def test_ret_rejects_tsc_pair(prof):
    with pytest.raises(ChannelError):
        prof.open_channel("r", "tsc_pair", HandlerSpec.ret_start("none"))


# ---- losslessness -------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(
    st.integers(0, 30_000),
    st.integers(1, 8),
    st.sampled_from(list(Codec)),
    st.sampled_from([1, 17, 256, 4096]),
    st.floats(0, 1),
)
def test_lossless_under_early_flush(tmp_path_factory, n, workers, codec, capacity, cut):
    """Random counts, worker counts and an early flush: every completed call decodes exactly once."""
    p = Profiler(tmp_path_factory.mktemp("ll"), workers=workers, capacity=capacity)
    ch = p.open_channel("c", "wall_ns", HandlerSpec.buffered_id(codec))
    stop = int(n * cut)
    ids = random.Random(n).sample(range(10**12), n)
    for i in ids[:stop]:
        p.log_ts(ch, i)
    reports = p.flush_all()
    for i in ids[stop:]:
        p.log_ts(ch, i)  # after termination these are rejected
    got = ids_of(p.channel(ch).sink_path)
    assert sorted(got.tolist()) == sorted(ids[:stop])
    assert list(got) == ids[:stop]  # per-channel order survives out-of-order workers
    assert reports[0].committed == stop and p.rejected(ch) == n - stop
    p.shutdown()


def test_disk_full_reports_unpersisted(tmp_path, monkeypatch):
    p = Profiler(tmp_path, capacity=10)
    ch = p.open_channel("c", "wall_ns", HandlerSpec.buffered_id())
    sink = p.channel(ch).sink

    def full(data):
        raise OSError(28, "No space left on device")

    monkeypatch.setattr(sink, "write_all", full)
    for i in range(35):
        p.log_ts(ch, i)
    with pytest.raises(SinkWriteError) as exc:
        p.close_channel(ch)
    assert exc.value.unpersisted == 35
    p.shutdown()


def _kill_and_decode(tmp_path, handler, n, workers, capacity, delay):
    proc = subprocess.Popen(
        [sys.executable, str(CHILD), str(tmp_path), "--handler", handler, "-n", str(n),
         "--workers", str(workers), "--capacity", str(capacity)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    assert proc.stdout.readline().strip() == "READY"
    time.sleep(delay)
    proc.send_signal(signal.SIGTERM)
    out, err = proc.communicate(timeout=120)
    result = json.loads(out.strip().splitlines()[-1])
    sink = read_sink(tmp_path / "events.cplg")
    return result, sink


@pytest.mark.parametrize("handler", ["ID", "BUFFERED_ID RAW", "BUFFERED_ID ZSTD", "BUFFERED_ID LZO1X"])
def test_sigterm_mid_stream(tmp_path, handler):
    result, sink = _kill_and_decode(tmp_path, handler, 10**7, 3, 4096, 0.5)
    assert result["terminated"]
    ids = sink.column("tuple_id")
    committed = result["reports"][0]["committed"]
    assert len(ids) == committed and np.array_equal(ids, np.arange(committed))
    assert committed in (result["done"], result["done"] + 1)
    assert 0 < committed < 10**7


# ---- configuration server --------------------------------------------------------------

MAPPING = """
# channel handler params
spout_in NULL
a ID
b XOY 2 1024
c BUFFERED_ID ZSTD
d SPC 0.5
"""


def test_mapping_and_replies():
    m = parse_mapping(MAPPING)
    assert m["a"] == HandlerSpec.id() and m["b"] == HandlerSpec.xoy(2, 1024)
    assert reply_for("GET b", m) == "XOY 2 1024"
    assert reply_for("GET unknown", m) == "NULL"
    assert reply_for("PUT b", m).startswith("ERR")
    assert reply_for("", m).startswith("ERR")
    with pytest.raises(SpecError):
        parse_mapping("x XOY 5 2")


def test_config_server_loopback(tmp_path):
    srv = ConfigServer(("127.0.0.1", 0), parse_mapping(MAPPING)).start()
    try:
        assert resolve_handler(srv.addr, "a") == HandlerSpec.id()
        assert resolve_handler(srv.addr, "unknown") == HandlerSpec.null()
        assert resolve_handler(srv.addr, "b").params == (2, 1024)
        assert resolve_handler(srv.addr, "c") == HandlerSpec.buffered_id("zstd")
        with socket.create_connection(srv.server_address) as s:
            s.sendall(b"HELLO\nGET d\n")
            f = s.makefile("rb")
            assert f.readline().startswith(b"ERR")
            assert f.readline() == b"SPC 0.5\n"
        p = Profiler(tmp_path, config_server=srv.addr)
        ch = p.open_channel("spout_in", "wall_ns", FROM_CONFIG_SERVER)
        assert p.channel(ch).spec.kind == HandlerKind.NULL
        p.log_ts(ch, 1)
        p.shutdown()
        assert len(read_sink(tmp_path / "spout_in.cplg")) == 0
    finally:
        srv.stop()


def test_config_server_unreachable(tmp_path):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    addr = "127.0.0.1:%d" % s.getsockname()[1]
    s.close()
    p = Profiler(tmp_path, config_server=addr)
    with pytest.raises(ConfigServerError):
        p.open_channel("x", "wall_ns", FROM_CONFIG_SERVER)
    with pytest.raises(ChannelError):
        Profiler(tmp_path).open_channel("x", "wall_ns", FROM_CONFIG_SERVER)


def test_cli_config_server_and_decode(tmp_path):
    mapfile = tmp_path / "map.txt"
    mapfile.write_text(MAPPING)
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    addr = "127.0.0.1:%d" % s.getsockname()[1]
    s.close()
    proc = subprocess.Popen(
        [sys.executable, "-c", "import sys; from cloudprof.profiler.cli import config_server_main; sys.exit(config_server_main())",
         "--bind", addr, "--map", str(mapfile)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
    )
    try:
        for _ in range(100):
            try:
                spec = resolve_handler(addr, "b")
                break
            except ConfigServerError:
                time.sleep(0.05)
        assert spec == HandlerSpec.xoy(2, 1024)
        p = Profiler(tmp_path, config_server=addr)
        ch = p.open_channel("b", "wall_ns", FROM_CONFIG_SERVER)
        for i in range(3000):
            p.log_ts(ch, i)
        p.shutdown()
    finally:
        proc.terminate()
        proc.wait(5)
    out = subprocess.run(
        [sys.executable, "-m", "cloudprof.profiler.cli", str(tmp_path / "b.cplg")],
        capture_output=True, text=True, check=True,
    ).stdout.splitlines()
    assert out[0] == "wall_ns,tuple_id"
    assert [int(r.split(",")[1]) for r in out[1:]] == [0, 1, 1024, 1025, 2048, 2049]
