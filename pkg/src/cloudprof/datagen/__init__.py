"""Throughput-controlled data generator and receiver."""

from .emission import (
    CountingTransport,
    EmissionPlan,
    EmitStats,
    NullTransport,
    PlanError,
    SenderResult,
    TcpTransport,
    build_frames,
    emission_loop,
    measure_send_overhead,
    run_sender,
)
from .jof import Bucket, ControlServer, Receiver, control_request, sink_drain
from .search import BelowFloorError, FakeSut, RunOutcome, SearchResult, evaluate_max_throughput, tcp_trial
from .wire import BucketError, decode_bucket, encode_bucket, encode_uniform_bucket

__all__ = [
    "BelowFloorError",
    "Bucket",
    "BucketError",
    "ControlServer",
    "CountingTransport",
    "EmissionPlan",
    "EmitStats",
    "FakeSut",
    "NullTransport",
    "PlanError",
    "Receiver",
    "RunOutcome",
    "SearchResult",
    "SenderResult",
    "TcpTransport",
    "build_frames",
    "control_request",
    "decode_bucket",
    "emission_loop",
    "encode_bucket",
    "encode_uniform_bucket",
    "evaluate_max_throughput",
    "measure_send_overhead",
    "run_sender",
    "sink_drain",
    "tcp_trial",
]
