"""PTWRITE insertion and the ptw-id -> origin mapping table.

A trace point gets a `ptwrite` immediately before its instruction; fork
points record the child thread handle, so their ptwrite goes right after
the spawn instead (flagged post). Points whose address is a compile-time
constant carry it in the table and need no runtime register.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .ir import Instruction, Operand, Program
from .selector import SelectionReport
from .vsa import TracePoint, VsaResult, find_shared_trace_points


class InstrumentError(Exception):
    pass


@dataclass
class MappingEntry:
    ptw_id: int
    origin: str
    register: str | None
    access: str
    disp: int
    imm_addr: int | None
    attach: str  # "pre" | "post"
    relations: list = field(default_factory=list)  # DerivedRelation JSON dicts

    def to_json(self):
        return {
            "ptw_id": self.ptw_id,
            "origin": self.origin,
            "register": self.register,
            "access": self.access,
            "disp": self.disp,
            "imm_addr": self.imm_addr,
            "attach": self.attach,
            "relations": self.relations,
        }


@dataclass
class MappingTable:
    entries: dict[int, MappingEntry] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def to_json(self):
        return {"entries": [self.entries[k].to_json() for k in sorted(self.entries)]}

    def dump(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @staticmethod
    def from_json(data: dict) -> "MappingTable":
        table = MappingTable()
        for e in data["entries"]:
            entry = MappingEntry(
                ptw_id=e["ptw_id"],
                origin=e["origin"],
                register=e["register"],
                access=e["access"],
                disp=e["disp"],
                imm_addr=e["imm_addr"],
                attach=e["attach"],
                relations=e.get("relations", []),
            )
            table.entries[entry.ptw_id] = entry
        return table


def _instrument_points(p: Program, points: list, relations: list):
    by_origin: dict[str, list[TracePoint]] = {}
    for t in points:
        by_origin.setdefault(t.iid, []).append(t)
    rel_by_source: dict[tuple, list] = {}
    for r in relations:
        rel_by_source.setdefault(r.source.key(), []).append(r)

    for t in points:
        try:
            p.instr(t.iid)
        except KeyError:
            raise InstrumentError(f"trace point references missing instruction {t.iid}")

    table = MappingTable()
    functions: dict[str, list[Instruction]] = {}
    next_id = 0

    for fn, body in p.functions.items():
        out: list[Instruction] = []
        for ins in body:
            pre = [t for t in by_origin.get(ins.id, []) if t.access != "fork"]
            post = [t for t in by_origin.get(ins.id, []) if t.access == "fork"]
            for t in sorted(pre, key=lambda t: t.key()):
                ptw, entry, next_id = _make_ptwrite(fn, t, next_id, "pre", rel_by_source)
                table.entries[entry.ptw_id] = entry
                out.append(ptw)
            out.append(ins)
            for t in sorted(post, key=lambda t: t.key()):
                ptw, entry, next_id = _make_ptwrite(fn, t, next_id, "post", rel_by_source)
                table.entries[entry.ptw_id] = entry
                out.append(ptw)
        functions[fn] = out
    return Program(functions=functions, entry=p.entry, globals=list(p.globals)), table


def _make_ptwrite(fn: str, t: TracePoint, ptw_id: int, attach: str, rel_by_source):
    if t.register is not None:
        payload = Operand("reg", reg=t.register)
    else:
        payload = Operand("imm", value=t.imm_addr or 0)
    ins = Instruction(
        id=f"{fn}:.ptw{ptw_id}",
        label=f".ptw{ptw_id}",
        kind="ptwrite",
        dst=payload,
        ptw_id=ptw_id,
        post=(attach == "post"),
    )
    entry = MappingEntry(
        ptw_id=ptw_id,
        origin=t.iid,
        register=t.register,
        access=t.access,
        disp=t.disp,
        imm_addr=t.imm_addr,
        attach=attach,
        relations=[r.to_json() for r in rel_by_source.get(t.key(), [])],
    )
    return ins, entry, ptw_id + 1


def instrument(p: Program, sel: SelectionReport):
    """Instrument the selected trace points; returns (program, table)."""
    return _instrument_points(p, sel.t_trace, sel.relations)


def instrument_naive(p: Program, res: VsaResult):
    """Baseline: every shared trace point, no pruning, no relations."""
    points = find_shared_trace_points(res, p)
    return _instrument_points(p, points, [])
