"""Selective hardware-trace data race detection pipeline.

Static analysis picks the minimal set of memory accesses worth tracing,
a deterministic simulator executes the instrumented program and emits
packetized trace streams, and offline decoding plus race detection
recover the same races a trace-everything baseline would find.
"""

from .decoder import DecodeResult, MemoryEvent, decode
from .detector import Race, RaceReport, detect_hb, detect_lockset
from .instrument import MappingTable, instrument, instrument_naive
from .ir import ParseError, Program, parse_program
from .report import PipelineResult, run_pipeline
from .selector import SelectionReport, select
from .sim import RunArtifacts, SimConfig
from .sim import run as run_sim
from .vsa import VsaResult, analyze, find_shared_trace_points

__all__ = [
    "DecodeResult",
    "MemoryEvent",
    "decode",
    "Race",
    "RaceReport",
    "detect_hb",
    "detect_lockset",
    "MappingTable",
    "instrument",
    "instrument_naive",
    "ParseError",
    "Program",
    "parse_program",
    "PipelineResult",
    "run_pipeline",
    "SelectionReport",
    "select",
    "RunArtifacts",
    "SimConfig",
    "run_sim",
    "VsaResult",
    "analyze",
    "find_shared_trace_points",
]

__version__ = "0.1.0"
