"""MinRTT measurement daemons: slave responders and the master orchestrator."""

from .fake import FakeLink, FakeNetwork, FakeNodeHandle
from .master import RemoteNode, SessionError, SessionResult, master_measure
from .probe import MeasurementFailed, ProbeTimeout, TcpLink, run_minrtt, run_rtt_probe
from .slave import Slave, slave_serve
from .wire import Frame, FrameError, MsgType

__all__ = [
    "FakeLink",
    "FakeNetwork",
    "FakeNodeHandle",
    "Frame",
    "FrameError",
    "MeasurementFailed",
    "MsgType",
    "ProbeTimeout",
    "RemoteNode",
    "SessionError",
    "SessionResult",
    "Slave",
    "TcpLink",
    "master_measure",
    "run_minrtt",
    "run_rtt_probe",
    "slave_serve",
]
