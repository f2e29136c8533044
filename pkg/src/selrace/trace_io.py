"""Bit-exact trace stream formats.

Per-CPU packet files: length-prefixed records, little-endian.
    u8 length, u8 kind tag, then payload:
      tag 1 TSC: u64 timestamp
      tag 2 CYC: u64 elapsed cycles
      tag 3 PTW: u64 payload, u32 ptw_id
Sideband file: fixed records (u64 timestamp, u32 cpu, u32 tid_out, u32 tid_in).
JSON mirrors of both exist for debugging.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

TAG_TSC, TAG_CYC, TAG_PTW = 1, 2, 3
IDLE_TID = 0xFFFFFFFF


@dataclass(frozen=True)
class Packet:
    kind: str  # "TSC" | "CYC" | "PTW"
    value: int  # timestamp / elapsed / payload
    ptw_id: int = 0

    def to_json(self):
        d = {"kind": self.kind, "value": self.value}
        if self.kind == "PTW":
            d["ptw_id"] = self.ptw_id
        return d


@dataclass(frozen=True)
class SidebandRecord:
    timestamp: int
    cpu: int
    tid_out: int
    tid_in: int

    def to_json(self):
        return {
            "timestamp": self.timestamp,
            "cpu": self.cpu,
            "tid_out": self.tid_out,
            "tid_in": self.tid_in,
        }


def encode_packet(p: Packet) -> bytes:
    if p.kind == "TSC":
        body = struct.pack("<BQ", TAG_TSC, p.value)
    elif p.kind == "CYC":
        body = struct.pack("<BQ", TAG_CYC, p.value)
    elif p.kind == "PTW":
        body = struct.pack("<BQI", TAG_PTW, p.value, p.ptw_id)
    else:
        raise ValueError(p.kind)
    return struct.pack("<B", len(body)) + body


def decode_stream(data: bytes) -> list[Packet]:
    packets = []
    off = 0
    while off < len(data):
        (length,) = struct.unpack_from("<B", data, off)
        off += 1
        tag = data[off]
        if tag == TAG_TSC:
            (_, v) = struct.unpack_from("<BQ", data, off)
            packets.append(Packet("TSC", v))
        elif tag == TAG_CYC:
            (_, v) = struct.unpack_from("<BQ", data, off)
            packets.append(Packet("CYC", v))
        elif tag == TAG_PTW:
            (_, v, pid) = struct.unpack_from("<BQI", data, off)
            packets.append(Packet("PTW", v, pid))
        else:
            raise ValueError(f"unknown packet tag {tag} at offset {off}")
        off += length
    return packets


def write_streams(out_dir, streams: list[list[Packet]]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for cpu, stream in enumerate(streams):
        blob = b"".join(encode_packet(p) for p in stream)
        (out / f"cpu{cpu}.trace").write_bytes(blob)
        (out / f"cpu{cpu}.trace.json").write_text(
            json.dumps([p.to_json() for p in stream], indent=1)
        )


def read_streams(in_dir) -> list[list[Packet]]:
    streams = []
    cpu = 0
    while True:
        f = Path(in_dir) / f"cpu{cpu}.trace"
        if not f.exists():
            break
        streams.append(decode_stream(f.read_bytes()))
        cpu += 1
    return streams


def write_sideband(out_dir, records: list[SidebandRecord]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = b"".join(
        struct.pack("<QIII", r.timestamp, r.cpu, r.tid_out, r.tid_in) for r in records
    )
    (out / "sideband.bin").write_bytes(blob)
    (out / "sideband.json").write_text(json.dumps([r.to_json() for r in records], indent=1))


def read_sideband(in_dir) -> list[SidebandRecord]:
    data = (Path(in_dir) / "sideband.bin").read_bytes()
    records = []
    size = struct.calcsize("<QIII")
    for off in range(0, len(data), size):
        ts, cpu, t_out, t_in = struct.unpack_from("<QIII", data, off)
        records.append(SidebandRecord(ts, cpu, t_out, t_in))
    return records
