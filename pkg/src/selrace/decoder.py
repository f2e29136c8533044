"""Offline reconstruction of per-thread event sequences from trace data.

Pipeline: per-CPU timestamp reconstruction (TSC base + cumulative CYC),
sideband-based thread attribution, mapping-table lookup to type events,
materialization of statically derived accesses, and a deterministic
global merge.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field

from .instrument import MappingTable
from .trace_io import IDLE_TID, Packet, SidebandRecord


class DecodeError(Exception):
    pass


@dataclass
class MemoryEvent:
    tid: int
    timestamp: int
    kind: str  # read | write | lock_acq | lock_rel | fork | join | gap
    address: int
    origin: str
    cpu: int = 0
    derived: bool = False

    def to_json(self):
        return {
            "tid": self.tid,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "address": self.address,
            "origin": self.origin,
            "cpu": self.cpu,
            "derived": self.derived,
        }

    @staticmethod
    def from_json(d):
        return MemoryEvent(
            tid=d["tid"],
            timestamp=d["timestamp"],
            kind=d["kind"],
            address=d["address"],
            origin=d["origin"],
            cpu=d.get("cpu", 0),
            derived=d.get("derived", False),
        )


def reconstruct_timestamps(stream: list[Packet]) -> list[tuple[Packet, int]]:
    """Timestamp of each PTW = last TSC + cumulative CYC since that TSC."""
    if stream and stream[0].kind != "TSC":
        raise DecodeError("stream does not start with a TSC packet")
    base = None
    elapsed = 0
    out = []
    for p in stream:
        if p.kind == "TSC":
            base, elapsed = p.value, 0
        elif p.kind == "CYC":
            if base is None:
                raise DecodeError("CYC packet before any TSC")
            elapsed += p.value
        else:
            if base is None:
                raise DecodeError("PTW packet before any TSC")
            out.append((p, base + elapsed))
    return out


def attribute_threads(
    ptws: list[tuple[Packet, int]], sideband: list[SidebandRecord], cpu: int
) -> list[tuple[Packet, int, int]]:
    """Attach the owning tid to each timestamped PTW on one CPU.

    A PTW at time t belongs to the thread scheduled in the half-open
    interval [switch_in, switch_out) containing t.
    """
    switches = [(r.timestamp, r.tid_in) for r in sideband if r.cpu == cpu]
    if not switches and ptws:
        raise DecodeError(f"no sideband records for cpu {cpu}")
    times = [t for t, _ in switches]
    out = []
    for p, ts in ptws:
        i = bisect_right(times, ts) - 1
        if i < 0:
            raise DecodeError(f"PTW at {ts} precedes first sideband record on cpu {cpu}")
        tid = switches[i][1]
        if tid == IDLE_TID:
            raise DecodeError(f"PTW at {ts} attributed to idle cpu {cpu}")
        out.append((p, ts, tid))
    return out


@dataclass
class DecodeResult:
    per_thread: dict[int, list[MemoryEvent]] = field(default_factory=dict)
    merged: list[MemoryEvent] = field(default_factory=list)

    def to_json_lines(self) -> str:
        return "\n".join(json.dumps(e.to_json(), sort_keys=True) for e in self.merged)


def decode(
    streams: list[list[Packet]],
    sideband: list[SidebandRecord],
    table: MappingTable,
    cycles_per_instr: int = 3,
    loss_log: list | None = None,
) -> DecodeResult:
    """Turn packet streams into typed, thread-attributed memory events."""
    per_thread: dict[int, list[MemoryEvent]] = {}
    for cpu, stream in enumerate(streams):
        stamped = reconstruct_timestamps(stream)
        for p, ts, tid in attribute_threads(stamped, sideband, cpu):
            entry = table.entries.get(p.ptw_id)
            if entry is None:
                raise DecodeError(f"unknown ptw_id {p.ptw_id}")
            # the ptwrite sits one instruction away from its origin
            ts_event = ts + cycles_per_instr if entry.attach == "pre" else ts - cycles_per_instr
            if entry.register is None:
                address = (entry.imm_addr or 0) + entry.disp
            else:
                address = p.value + entry.disp
            if entry.access in ("fork", "join"):
                address = p.value
            ev = MemoryEvent(tid, ts_event, entry.access, address, entry.origin, cpu)
            per_thread.setdefault(tid, []).append(ev)
            _synthesize_derived(per_thread[tid], ev, p.value, entry, cycles_per_instr)

    for tid, events in per_thread.items():
        events.sort(key=lambda e: e.timestamp)
        _insert_derived(events, cycles_per_instr)

    if loss_log:
        _insert_gaps(per_thread, sideband, loss_log)

    merged = sorted(
        (e for evs in per_thread.values() for e in evs),
        key=lambda e: (e.timestamp, e.cpu, e.tid, e.origin),
    )
    return DecodeResult(per_thread=per_thread, merged=merged)


def _synthesize_derived(events, source_ev, payload, entry, cpi):
    """Queue derived events next to their source; final position and
    timestamp are fixed up once the thread's list is complete."""
    for rel in entry.relations:
        d = rel["derived"]
        ev = MemoryEvent(
            tid=source_ev.tid,
            timestamp=source_ev.timestamp,  # placeholder, repositioned later
            kind=d["access"],
            address=payload + rel["delta"] + d["disp"],
            origin=d["instruction"],
            cpu=source_ev.cpu,
            derived=True,
        )
        ev._source = source_ev  # type: ignore[attr-defined]
        ev._rel = rel  # type: ignore[attr-defined]
        events.append(ev)


def _insert_derived(events: list[MemoryEvent], cpi: int) -> None:
    """Place each derived event after every recorded event that can sit on
    a path between its source and its own instruction, then give it a
    timestamp strictly inside the surrounding recorded gap."""
    derived = [e for e in events if e.derived]
    if not derived:
        return
    recorded = [e for e in events if not e.derived]
    for ev in derived:
        rel = ev._rel  # type: ignore[attr-defined]
        src = ev._source  # type: ignore[attr-defined]
        between = set(rel["between"])
        pos = recorded.index(src) + 1
        while pos < len(recorded) and recorded[pos].origin in between:
            pos += 1
        synth = src.timestamp + rel["distance"] * cpi
        prev_ts = recorded[pos - 1].timestamp
        ts = max(synth, prev_ts + 1)
        if pos < len(recorded):
            ts = min(ts, recorded[pos].timestamp - 1)
        ev.timestamp = max(ts, prev_ts + 1)
        recorded.insert(pos, ev)
    # strictly increasing repair for stacked derived events
    for i in range(1, len(recorded)):
        if recorded[i].derived and recorded[i].timestamp <= recorded[i - 1].timestamp:
            recorded[i].timestamp = recorded[i - 1].timestamp + 1
    events[:] = recorded
    for ev in derived:
        del ev._source, ev._rel  # type: ignore[attr-defined]


def _insert_gaps(per_thread, sideband, loss_log) -> None:
    """Loss windows become per-thread gap markers; the detector treats a
    gap as an epoch barrier for that thread."""
    for w in loss_log:
        cpu = w["cpu"] if isinstance(w, dict) else w.cpu
        start = w["start"] if isinstance(w, dict) else w.start
        end = w["end"] if isinstance(w, dict) else w.end
        switches = [(r.timestamp, r.tid_in) for r in sideband if r.cpu == cpu]
        affected = set()
        for i, (ts, tid) in enumerate(switches):
            nxt = switches[i + 1][0] if i + 1 < len(switches) else None
            if tid == IDLE_TID:
                continue
            if ts < end and (nxt is None or nxt > start):
                affected.add(tid)
        for tid in sorted(affected):
            evs = per_thread.setdefault(tid, [])
            evs.append(MemoryEvent(tid, start, "gap", 0, f"loss@cpu{cpu}", cpu))
            evs.sort(key=lambda e: e.timestamp)


def read_events_jsonl(text: str) -> list[MemoryEvent]:
    return [MemoryEvent.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
