"""Post-mortem analysis: join sinks, apply clock relations, summarize."""

from .bounds import ErrorBoundReport, NtpRow, RetLog, compare_error_bounds, cp_bound_ns, read_ntp_csv, ret_running_max
from .merge import (
    ChannelLog,
    ClockContext,
    MergeError,
    MissingRelationError,
    TraceDataError,
    TraceDuration,
    TraceRecord,
    TraceSet,
    TupleTrace,
    merge_logs,
    trace_duration,
)
from .stats import LatencyStats, NoDataError, histogram, stats

__all__ = [
    "ChannelLog",
    "ClockContext",
    "ErrorBoundReport",
    "LatencyStats",
    "MergeError",
    "MissingRelationError",
    "NoDataError",
    "NtpRow",
    "RetLog",
    "TraceDataError",
    "TraceDuration",
    "TraceRecord",
    "TraceSet",
    "TupleTrace",
    "compare_error_bounds",
    "cp_bound_ns",
    "histogram",
    "merge_logs",
    "read_ntp_csv",
    "ret_running_max",
    "stats",
    "trace_duration",
]
