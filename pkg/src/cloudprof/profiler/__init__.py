"""Channel/handler event logging."""

from .channel import (
    ChannelError,
    CloseReport,
    NoDataError,
    Profiler,
    close_channel,
    configure,
    downsample_selects,
    first_last_result,
    flush_all_on_termination,
    get_profiler,
    log_ts,
    open_channel,
    periodic_counter_sample,
    xoy_selects,
)
from .configserver import ConfigServer, ConfigServerError, resolve_handler
from .pipeline import SinkWriteError
from .sinkfile import PC_TOTAL, Sink, SinkFormatError, SinkHeader, read_sink
from .spec import FROM_CONFIG_SERVER, Codec, DataFormat, HandlerKind, HandlerSpec, SpecError

__all__ = [
    "ChannelError",
    "CloseReport",
    "Codec",
    "ConfigServer",
    "ConfigServerError",
    "DataFormat",
    "FROM_CONFIG_SERVER",
    "HandlerKind",
    "HandlerSpec",
    "NoDataError",
    "PC_TOTAL",
    "Profiler",
    "Sink",
    "SinkFormatError",
    "SinkHeader",
    "SinkWriteError",
    "SpecError",
    "close_channel",
    "configure",
    "downsample_selects",
    "first_last_result",
    "flush_all_on_termination",
    "get_profiler",
    "log_ts",
    "open_channel",
    "periodic_counter_sample",
    "read_sink",
    "resolve_handler",
    "xoy_selects",
]
