"""Trace-driven ABR streaming simulation and evaluation for 5G UHD video."""
from .errors import *  # noqa: F401,F403
from .qoe import DEFAULT_LADDER, METRICS, BitrateLadder, SessionRecord, session_qoe
from .simulator import SimConfig, run_session
from .traces import ThroughputTrace, parse_csv, synthesize

__version__ = "0.1.0"
