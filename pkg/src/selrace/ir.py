"""Toy multithreaded assembly IR: parsing, validation, pretty-printing.

The textual format is line oriented:

    global g100 size 8
    fn main {
        L1: mov [g100], r0
        L2: halt
    }

Instruction ids are "function:label". Labels are optional in the source
text; unlabeled instructions get synthetic labels ".iN" by position.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

GENERAL_REGISTERS = tuple(f"r{i}" for i in range(8))
RESERVED_REGISTERS = ("fp", "sp")
REGISTERS = GENERAL_REGISTERS + RESERVED_REGISTERS


class ParseError(Exception):
    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


@dataclass(frozen=True)
class Operand:
    """One of: imm / global address literal / reg / [reg+disp] / [gN]."""

    kind: str  # "imm" | "reg" | "mem" | "abs"
    value: int = 0  # imm value or abs address
    reg: str | None = None  # base register for reg/mem
    disp: int = 0  # displacement for mem/abs
    global_addr: bool = False  # imm written as gN (address literal)

    def render(self) -> str:
        if self.kind == "imm":
            return f"g{self.value}" if self.global_addr else str(self.value)
        if self.kind == "reg":
            return self.reg
        if self.kind == "mem":
            if self.disp == 0:
                return f"[{self.reg}]"
            sign = "+" if self.disp > 0 else "-"
            return f"[{self.reg}{sign}{abs(self.disp)}]"
        if self.kind == "abs":
            if self.disp == 0:
                return f"[g{self.value}]"
            return f"[g{self.value}+{self.disp}]"
        raise AssertionError(self.kind)

    @property
    def address(self) -> int:
        assert self.kind == "abs"
        return self.value + self.disp


def imm(v: int) -> Operand:
    return Operand("imm", value=v)


def gaddr(a: int) -> Operand:
    return Operand("imm", value=a, global_addr=True)


def reg(name: str) -> Operand:
    return Operand("reg", reg=name)


def mem(base: str, disp: int = 0) -> Operand:
    return Operand("mem", reg=base, disp=disp)


@dataclass
class Instruction:
    id: str  # "function:label"
    label: str
    kind: str  # mov/add/sub/cmp/jmp/je/jne/call/ret/alloc/lock/unlock/spawn/join/ptwrite/halt
    dst: Operand | None = None
    src: Operand | None = None
    target: str | None = None  # jump label or callee/spawn function name
    site: str | None = None  # alloc site tag
    ptw_id: int | None = None
    post: bool = False  # ptwrite attached after its origin (spawn handles)

    @property
    def function(self) -> str:
        return self.id.split(":", 1)[0]

    def operands(self):
        return [op for op in (self.dst, self.src) if op is not None]

    def mem_operand(self) -> Operand | None:
        """The single memory operand (mem or abs), if any."""
        for op in self.operands():
            if op.kind in ("mem", "abs"):
                return op
        return None

    def is_mem_write(self) -> bool:
        return self.kind == "mov" and self.dst is not None and self.dst.kind in ("mem", "abs")

    def render(self) -> str:
        k = self.kind
        if k in ("mov", "add", "sub", "cmp"):
            return f"{k} {self.dst.render()}, {self.src.render()}"
        if k in ("jmp", "je", "jne"):
            return f"{k} {self.target}"
        if k == "call":
            return f"call {self.target}"
        if k == "ret":
            return "ret"
        if k == "halt":
            return "halt"
        if k == "alloc":
            return f"alloc {self.dst.render()}, @{self.site}"
        if k in ("lock", "unlock", "join"):
            return f"{k} {self.dst.render()}"
        if k == "spawn":
            return f"spawn {self.target}, {self.dst.render()}"
        if k == "ptwrite":
            mnem = "ptwrite+" if self.post else "ptwrite"
            payload = self.dst.render() if self.dst is not None else "0"
            return f"{mnem} {payload}, #{self.ptw_id}"
        raise AssertionError(k)


@dataclass
class Program:
    functions: dict[str, list[Instruction]]  # insertion-ordered
    entry: str = "main"
    globals: list[tuple[int, int]] = field(default_factory=list)  # (address, size)

    def instructions(self):
        for fn in self.functions:
            yield from self.functions[fn]

    def instr(self, iid: str) -> Instruction:
        fn = iid.split(":", 1)[0]
        for ins in self.functions[fn]:
            if ins.id == iid:
                return ins
        raise KeyError(iid)

    def index_of(self, iid: str) -> int:
        fn = iid.split(":", 1)[0]
        for idx, ins in enumerate(self.functions[fn]):
            if ins.id == iid:
                return idx
        raise KeyError(iid)

    def global_cells(self):
        """All declared global byte addresses at word (8-byte) granularity."""
        cells = set()
        for addr, size in self.globals:
            for a in range(addr, addr + size, 8):
                cells.add(a)
        return cells

    def in_global_range(self, addr: int) -> bool:
        return any(base <= addr < base + size for base, size in self.globals)

    def render(self) -> str:
        lines = [f"global g{addr} size {size}" for addr, size in self.globals]
        for fn, body in self.functions.items():
            lines.append(f"fn {fn} {{")
            for ins in body:
                lines.append(f"  {ins.label}: " + ins.render())
            lines.append("}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "entry": self.entry,
            "globals": [{"address": a, "size": s} for a, s in self.globals],
            "functions": {
                fn: [
                    {
                        "id": ins.id,
                        "label": ins.label,
                        "text": ins.render(),
                    }
                    for ins in body
                ]
                for fn, body in self.functions.items()
            },
        }


_OPERAND_RE = re.compile(
    r"""^(?:
        (?P<imm>-?\d+)
        | g(?P<gaddr>\d+)
        | (?P<reg>r[0-7]|fp|sp)
        | \[ (?P<base>r[0-7]|fp|sp) (?: (?P<sign>[+-]) (?P<disp>\d+) )? \]
        | \[ g(?P<aaddr>\d+) (?: \+ (?P<adisp>\d+) )? \]
    )$""",
    re.VERBOSE,
)


def parse_operand(text: str, line: int) -> Operand:
    m = _OPERAND_RE.match(text.strip())
    if not m:
        raise ParseError(f"malformed operand {text!r}", line)
    if m.group("imm") is not None:
        return imm(int(m.group("imm")))
    if m.group("gaddr") is not None:
        return gaddr(int(m.group("gaddr")))
    if m.group("reg") is not None:
        return reg(m.group("reg"))
    if m.group("base") is not None:
        disp = int(m.group("disp") or 0)
        if m.group("sign") == "-":
            disp = -disp
        return mem(m.group("base"), disp)
    return Operand("abs", value=int(m.group("aaddr")), disp=int(m.group("adisp") or 0))


def _split_two(rest: str, line: int):
    parts = [p.strip() for p in rest.split(",")]
    if len(parts) != 2:
        raise ParseError(f"expected two operands, got {rest!r}", line)
    return parts


def _parse_instruction(fn: str, label: str, text: str, line: int) -> Instruction:
    parts = text.split(None, 1)
    mnem = parts[0]
    rest = parts[1].strip() if len(parts) > 1 else ""
    iid = f"{fn}:{label}"

    if mnem in ("mov", "add", "sub", "cmp"):
        a, b = _split_two(rest, line)
        dst, src = parse_operand(a, line), parse_operand(b, line)
        n_mem = sum(1 for op in (dst, src) if op.kind in ("mem", "abs"))
        if n_mem > 1:
            raise ParseError("at most one memory operand allowed", line)
        if mnem == "mov" and dst.kind == "imm":
            raise ParseError("mov destination cannot be an immediate", line)
        if mnem in ("add", "sub") and dst.kind != "reg":
            raise ParseError(f"{mnem} destination must be a register", line)
        if mnem in ("add", "sub") and dst.reg in RESERVED_REGISTERS:
            raise ParseError(f"{dst.reg} is reserved for stack addressing", line)
        if mnem == "mov" and dst.kind == "reg" and dst.reg in RESERVED_REGISTERS:
            raise ParseError(f"{dst.reg} is reserved for stack addressing", line)
        return Instruction(iid, label, mnem, dst=dst, src=src)
    if mnem in ("jmp", "je", "jne"):
        if not rest:
            raise ParseError(f"{mnem} needs a target label", line)
        return Instruction(iid, label, mnem, target=rest)
    if mnem == "call":
        return Instruction(iid, label, "call", target=rest)
    if mnem == "ret":
        return Instruction(iid, label, "ret")
    if mnem == "halt":
        return Instruction(iid, label, "halt")
    if mnem == "alloc":
        a, b = _split_two(rest, line)
        dst = parse_operand(a, line)
        if dst.kind != "reg" or dst.reg in RESERVED_REGISTERS:
            raise ParseError("alloc destination must be a general register", line)
        if not b.startswith("@"):
            raise ParseError("alloc needs a @site tag", line)
        return Instruction(iid, label, "alloc", dst=dst, site=b[1:])
    if mnem in ("lock", "unlock", "join"):
        op = parse_operand(rest, line)
        if op.kind not in ("reg", "imm"):
            raise ParseError(f"{mnem} operand must be a register or address literal", line)
        return Instruction(iid, label, mnem, dst=op)
    if mnem == "spawn":
        a, b = _split_two(rest, line)
        dst = parse_operand(b, line)
        if dst.kind != "reg" or dst.reg in RESERVED_REGISTERS:
            raise ParseError("spawn handle must be a general register", line)
        return Instruction(iid, label, "spawn", target=a, dst=dst)
    if mnem in ("ptwrite", "ptwrite+"):
        a, b = _split_two(rest, line)
        payload = parse_operand(a, line)
        if not b.startswith("#"):
            raise ParseError("ptwrite needs a #id", line)
        return Instruction(
            iid, label, "ptwrite", dst=payload, ptw_id=int(b[1:]), post=mnem.endswith("+")
        )
    raise ParseError(f"unknown mnemonic {mnem!r}", line)


def parse_program(text: str) -> Program:
    """Parse and validate a program; raises ParseError on any defect."""
    functions: dict[str, list[Instruction]] = {}
    globals_: list[tuple[int, int]] = []
    current: str | None = None
    counter = 0

    # tolerate "fn main { ... }" on one line by splitting on braces
    normalized = text.replace("{", "{\n").replace("}", "\n}")
    for lineno, raw in enumerate(normalized.splitlines(), start=1):
        stmt = raw.split(";")[0].strip()
        if not stmt:
            continue
        if stmt.startswith("global "):
            m = re.match(r"global\s+g(\d+)\s+size\s+(\d+)$", stmt)
            if not m:
                raise ParseError(f"malformed global declaration {stmt!r}", lineno)
            globals_.append((int(m.group(1)), int(m.group(2))))
            continue
        if stmt.startswith("fn "):
            m = re.match(r"fn\s+(\w+)\s*\{$", stmt)
            if not m:
                raise ParseError(f"malformed function header {stmt!r}", lineno)
            current = m.group(1)
            if current in functions:
                raise ParseError(f"duplicate function {current!r}", lineno)
            functions[current] = []
            counter = 0
            continue
        if stmt == "}":
            current = None
            continue
        if current is None:
            raise ParseError(f"statement outside function: {stmt!r}", lineno)
        m = re.match(r"([.\w]+)\s*:\s*(.*)$", stmt)
        if m:
            label, body = m.group(1), m.group(2)
        else:
            label, body = None, stmt
        counter += 1
        if label is None:
            label = f".i{counter}"
        functions[current].append(_parse_instruction(current, label, body, lineno))

    prog = Program(functions=functions, globals=sorted(globals_))
    _validate(prog)
    return prog


def _validate(p: Program) -> None:
    if p.entry not in p.functions:
        raise ParseError(f"no entry function {p.entry!r}")
    for fn, body in p.functions.items():
        seen = set()
        for ins in body:
            if ins.label in seen:
                raise ParseError(f"duplicate label {ins.label!r} in {fn}")
            seen.add(ins.label)
        for ins in body:
            if ins.kind in ("jmp", "je", "jne") and ins.target not in seen:
                raise ParseError(f"unresolved label {ins.target!r} in {fn} at {ins.id}")
            if ins.kind in ("call", "spawn") and ins.target not in p.functions:
                raise ParseError(f"unresolved function {ins.target!r} at {ins.id}")


def program_to_json_str(p: Program) -> str:
    return json.dumps(p.to_json(), indent=2, sort_keys=True)
