"""Value-set analysis that stays sound for multithreaded programs.

Registers and stack slots get flow-sensitive value sets along the ICFG;
global and heap locations share one flow-insensitive summary so that
cross-thread stores are always visible to every load.

A-loc keys:
    ("reg", name)          register
    ("stack", fn, offset)  stack slot, fp-relative per function
    ("global", addr)       global byte address (word granularity)
    ("heap", site)         allocation site
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .icfg import ICFG, build_icfg
from .ir import GENERAL_REGISTERS, Instruction, Operand, Program

TOP = "top"  # region widening sentinel
CONST_BOUND = 16  # distinct constants tracked before widening


class VsaError(Exception):
    pass


@dataclass
class ValueSet:
    """Tripartite value set plus tracked non-address constants."""

    globals_: object = field(default_factory=set)  # set[int] | TOP
    stacks: object = field(default_factory=set)  # set[(fn, off)] | TOP
    heaps: object = field(default_factory=set)  # set[site] | TOP
    consts: object = field(default_factory=set)  # set[int] | TOP

    @staticmethod
    def bottom() -> "ValueSet":
        return ValueSet()

    @staticmethod
    def of_consts(*vals) -> "ValueSet":
        return ValueSet(consts=set(vals))

    @staticmethod
    def of_global(addr) -> "ValueSet":
        return ValueSet(globals_={addr})

    @staticmethod
    def of_stack(fn, off) -> "ValueSet":
        return ValueSet(stacks={(fn, off)})

    @staticmethod
    def of_heap(site) -> "ValueSet":
        return ValueSet(heaps={site})

    @staticmethod
    def top_all() -> "ValueSet":
        return ValueSet(TOP, TOP, TOP, TOP)

    def copy(self) -> "ValueSet":
        return ValueSet(
            TOP if self.globals_ is TOP else set(self.globals_),
            TOP if self.stacks is TOP else set(self.stacks),
            TOP if self.heaps is TOP else set(self.heaps),
            TOP if self.consts is TOP else set(self.consts),
        )

    def is_bottom(self) -> bool:
        return all(
            part is not TOP and not part
            for part in (self.globals_, self.stacks, self.heaps, self.consts)
        )

    def union_into(self, other: "ValueSet") -> bool:
        """self |= other; returns True if self changed."""
        changed = False
        for name in ("globals_", "stacks", "heaps", "consts"):
            mine, theirs = getattr(self, name), getattr(other, name)
            if mine is TOP:
                continue
            if theirs is TOP:
                setattr(self, name, TOP)
                changed = True
                continue
            if not theirs <= mine:
                mine |= theirs
                changed = True
        if self.consts is not TOP and len(self.consts) > CONST_BOUND:
            self.consts = TOP
            changed = True
        return changed

    def joined(self, other: "ValueSet") -> "ValueSet":
        out = self.copy()
        out.union_into(other)
        return out

    def shifted(self, delta: int) -> "ValueSet":
        """Constant pointer arithmetic within each region."""
        return ValueSet(
            TOP if self.globals_ is TOP else {a + delta for a in self.globals_},
            TOP if self.stacks is TOP else {(f, o + delta) for f, o in self.stacks},
            self.heaps if self.heaps is TOP else set(self.heaps),  # site granularity
            TOP if self.consts is TOP else {c + delta for c in self.consts},
        )

    def widened_regions(self, other: "ValueSet") -> "ValueSet":
        """Unmodeled arithmetic: every region either side touches goes to Top."""

        def w(a, b):
            return TOP if (a is TOP or b is TOP or a or b) else set()

        return ValueSet(
            w(self.globals_, other.globals_),
            w(self.stacks, other.stacks),
            w(self.heaps, other.heaps),
            w(self.consts, other.consts),
        )

    def has_shared(self) -> bool:
        return (
            self.globals_ is TOP
            or self.heaps is TOP
            or bool(self.globals_)
            or bool(self.heaps)
        )

    def to_json(self):
        def enc(part, f=None):
            if part is TOP:
                return "top"
            return sorted(f(x) if f else x for x in part)

        return {
            "global": enc(self.globals_),
            "stack": enc(self.stacks, lambda s: f"{s[0]}:{s[1]}"),
            "heap": enc(self.heaps),
            "consts": enc(self.consts),
        }

    def __eq__(self, other):
        def norm(p):
            return p if p is TOP else frozenset(p)

        return isinstance(other, ValueSet) and all(
            norm(getattr(self, n)) == norm(getattr(other, n))
            for n in ("globals_", "stacks", "heaps", "consts")
        )


@dataclass(frozen=True)
class TracePoint:
    """An (instruction, register, access-kind) selected for recording."""

    iid: str
    register: str | None  # None when the address is a table constant
    access: str  # read | write | lock_acq | lock_rel | fork | join
    disp: int = 0
    imm_addr: int | None = None

    @property
    def is_memory(self) -> bool:
        return self.access in ("read", "write")

    @property
    def is_sync(self) -> bool:
        return not self.is_memory

    def key(self):
        return (self.iid, self.register or "", self.access)

    def to_json(self):
        return {
            "instruction": self.iid,
            "register": self.register,
            "access": self.access,
            "disp": self.disp,
            "imm_addr": self.imm_addr,
        }


@dataclass
class ResolvedCells:
    """Abstract address cells a memory operand may touch."""

    cells: list = field(default_factory=list)  # aloc keys
    top_global: bool = False
    top_stack: bool = False
    top_heap: bool = False

    @property
    def any_top(self) -> bool:
        return self.top_global or self.top_stack or self.top_heap

    def shared_part(self):
        return [c for c in self.cells if c[0] in ("global", "heap")]

    def touches_shared(self) -> bool:
        return self.top_global or self.top_heap or bool(self.shared_part())


def _seed_state(fn: str) -> dict:
    state = {("reg", r): ValueSet.of_consts(0) for r in GENERAL_REGISTERS}
    state[("reg", "fp")] = ValueSet.of_stack(fn, 0)
    state[("reg", "sp")] = ValueSet.of_stack(fn, 0)
    return state


class VsaResult:
    def __init__(self, program: Program, icfg: ICFG):
        self.program = program
        self.icfg = icfg
        self.in_states: dict[str, dict] = {}
        self.shared: dict[tuple, ValueSet] = {}
        self.shared_top = ValueSet.bottom()  # stores through unknown addresses
        self.iterations = 0

    # -- queries ---------------------------------------------------------

    def before(self, iid: str) -> dict:
        return self.in_states.get(iid, {})

    def reg_vs(self, iid: str, reg: str) -> ValueSet:
        return self.before(iid).get(("reg", reg), ValueSet.bottom())

    def after(self, iid: str) -> dict:
        """Local state just after iid (recomputed; shared not mutated)."""
        state = {k: v.copy() for k, v in self.before(iid).items()}
        _transfer(self.program, self.program.instr(iid), state, self, mutate_shared=False)
        return state

    def shared_vs(self, cell) -> ValueSet:
        base = self.shared.get(cell)
        out = base.copy() if base is not None else ValueSet.of_consts(0)
        out.union_into(self.shared_top)
        return out

    def resolve_operand(self, iid: str, op: Operand) -> ResolvedCells:
        """Abstract cells addressed by a mem/abs operand at iid (pre-state)."""
        out = ResolvedCells()
        if op.kind == "abs":
            out.cells.append(("global", op.address))
            return out
        assert op.kind == "mem"
        vs = self.reg_vs(iid, op.reg)
        return resolve_address(vs, op.disp, self.program)

    def to_json(self):
        return {
            "localValueSet": {
                iid: {
                    ("%s" % "/".join(str(p) for p in k)): v.to_json()
                    for k, v in sorted(state.items(), key=lambda kv: str(kv[0]))
                }
                for iid, state in sorted(self.in_states.items())
            },
            "sharedValueSet": {
                "/".join(str(p) for p in k): v.to_json()
                for k, v in sorted(self.shared.items(), key=lambda kv: str(kv[0]))
            },
            "sharedTop": self.shared_top.to_json(),
            "iterations": self.iterations,
        }


def resolve_address(vs: ValueSet, disp: int, program: Program) -> ResolvedCells:
    out = ResolvedCells()
    if vs.globals_ is TOP or vs.consts is TOP:
        out.top_global = True
    if vs.stacks is TOP or vs.consts is TOP:
        out.top_stack = True
    if vs.heaps is TOP or vs.consts is TOP:
        out.top_heap = True
    if vs.globals_ is not TOP:
        for a in vs.globals_:
            out.cells.append(("global", a + disp))
    if vs.stacks is not TOP:
        for f, o in vs.stacks:
            out.cells.append(("stack", f, o + disp))
    if vs.heaps is not TOP:
        for s in vs.heaps:
            out.cells.append(("heap", s))
    if vs.consts is not TOP:
        # plain constants that land inside a declared global are addresses
        for c in vs.consts:
            if c != 0 and program.in_global_range(c + disp):
                out.cells.append(("global", c + disp))
    return out


def _eval_operand(program: Program, iid_state: dict, res: VsaResult, op: Operand) -> ValueSet:
    if op.kind == "imm":
        if op.global_addr:
            return ValueSet.of_global(op.value)
        if program.in_global_range(op.value):
            return ValueSet.of_global(op.value)
        return ValueSet.of_consts(op.value)
    if op.kind == "reg":
        got = iid_state.get(("reg", op.reg))
        return got.copy() if got is not None else ValueSet.bottom()
    # memory load
    if op.kind == "abs":
        cells = ResolvedCells(cells=[("global", op.address)])
    else:
        base = iid_state.get(("reg", op.reg), ValueSet.bottom())
        cells = resolve_address(base, op.disp, program)
    if cells.any_top:
        return ValueSet.top_all()
    out = ValueSet.bottom()
    for cell in cells.cells:
        if cell[0] == "stack":
            out.union_into(iid_state.get(cell, ValueSet.of_consts(0)))
        else:
            out.union_into(res.shared_vs(cell))
    return out


def _transfer(
    program: Program,
    ins: Instruction,
    state: dict,
    res: VsaResult,
    mutate_shared: bool = True,
):
    """Updates state in place; returns True if the shared summary changed."""
    shared_changed = False

    def shared_union(cell, vs):
        nonlocal shared_changed
        if not mutate_shared:
            return
        slot = res.shared.setdefault(cell, ValueSet.bottom())
        if slot.union_into(vs):
            shared_changed = True

    k = ins.kind
    if k == "mov":
        val = _eval_operand(program, state, res, ins.src)
        dst = ins.dst
        if dst.kind == "reg":
            state[("reg", dst.reg)] = val
        else:
            if dst.kind == "abs":
                cells = ResolvedCells(cells=[("global", dst.address)])
            else:
                base = state.get(("reg", dst.reg), ValueSet.bottom())
                cells = resolve_address(base, dst.disp, program)
            if cells.any_top:
                if mutate_shared and res.shared_top.union_into(val):
                    shared_changed = True
                if cells.top_stack:
                    # unknown stack store: weaken every known stack slot
                    for key, slot in state.items():
                        if key[0] == "stack":
                            slot.union_into(val)
            for cell in cells.cells:
                if cell[0] == "stack":
                    state.setdefault(cell, ValueSet.of_consts(0)).union_into(val)
                else:
                    shared_union(cell, val)
    elif k in ("add", "sub"):
        rkey = ("reg", ins.dst.reg)
        cur = state.get(rkey, ValueSet.bottom())
        sval = _eval_operand(program, state, res, ins.src)
        pure_consts = (
            sval.consts is not TOP
            and not sval.has_shared()
            and (sval.stacks is not TOP and not sval.stacks)
            and sval.consts
        )
        if pure_consts and len(sval.consts) <= CONST_BOUND:
            deltas = [c if k == "add" else -c for c in sval.consts]
            out = ValueSet.bottom()
            for d in deltas:
                out.union_into(cur.shifted(d))
            state[rkey] = out
        else:
            state[rkey] = cur.widened_regions(sval)
    elif k == "alloc":
        state[("reg", ins.dst.reg)] = ValueSet.of_heap(ins.site)
    elif k == "spawn":
        state[("reg", ins.dst.reg)] = ValueSet(consts=TOP)  # child tid, unknown
    # cmp/jmp/je/jne/call/ret/lock/unlock/join/ptwrite/halt: identity
    return shared_changed


def _join_state(dst: dict, src: dict) -> bool:
    changed = False
    for key, vs in src.items():
        slot = dst.get(key)
        if slot is None:
            dst[key] = vs.copy()
            changed = True
        elif slot.union_into(vs):
            changed = True
    return changed


def analyze(program: Program, icfg: ICFG | None = None) -> VsaResult:
    """Worklist fixpoint over the ICFG; least solution of the transfer system."""
    if icfg is None:
        icfg = build_icfg(program)
    res = VsaResult(program, icfg)
    entry_body = program.functions[program.entry]
    if not entry_body:
        return res

    # instructions that read shared cells must rerun when the summary grows
    shared_readers = [
        ins.id
        for ins in program.instructions()
        if (ins.src is not None and ins.src.kind in ("mem", "abs"))
        or (ins.kind == "cmp" and ins.dst is not None and ins.dst.kind in ("mem", "abs"))
    ]

    res.in_states[entry_body[0].id] = _seed_state(program.entry)
    worklist = deque([entry_body[0].id])
    queued = {entry_body[0].id}

    n_alocs = (
        len(icfg.nodes)
        + len(program.global_cells())
        + sum(1 for i in program.instructions() if i.kind == "alloc")
        + 16
    )
    max_iterations = max(1, len(icfg.nodes)) * n_alocs * 8

    def push(iid):
        if iid not in queued:
            worklist.append(iid)
            queued.add(iid)

    while worklist:
        res.iterations += 1
        if res.iterations > max_iterations:
            raise VsaError("fixpoint iteration bound exceeded")
        iid = worklist.popleft()
        queued.discard(iid)
        ins = program.instr(iid)
        out = {key: vs.copy() for key, vs in res.in_states.get(iid, {}).items()}
        shared_changed = _transfer(program, ins, out, res)
        if shared_changed:
            for r in shared_readers:
                push(r)
        for edge in res.icfg.succs.get(iid, []):
            if edge.kind == "spawn":
                succ_state = _seed_state(edge.dst.split(":", 1)[0])
            else:
                succ_state = {key: vs for key, vs in out.items()}
                if edge.kind == "call":
                    callee = edge.dst.split(":", 1)[0]
                    succ_state = dict(succ_state)
                    succ_state[("reg", "fp")] = ValueSet.of_stack(callee, 0)
                    succ_state[("reg", "sp")] = ValueSet.of_stack(callee, 0)
                elif edge.kind == "ret":
                    caller = edge.dst.split(":", 1)[0]
                    succ_state = dict(succ_state)
                    succ_state[("reg", "fp")] = ValueSet.of_stack(caller, 0)
                    succ_state[("reg", "sp")] = ValueSet.of_stack(caller, 0)
            slot = res.in_states.setdefault(edge.dst, {})
            if _join_state(slot, succ_state):
                push(edge.dst)
    return res


def access_points(ins: Instruction):
    """(operand, access kind) pairs for the instruction's memory traffic."""
    out = []
    m = ins.mem_operand()
    if m is not None and ins.kind in ("mov", "add", "sub", "cmp"):
        kind = "write" if ins.is_mem_write() else "read"
        out.append((m, kind))
    return out


def find_shared_trace_points(res: VsaResult, program: Program) -> list[TracePoint]:
    """Keep accesses whose base may hold global or heap addresses, drop
    pure-stack accesses, and always keep synchronization operands."""
    points: list[TracePoint] = []
    for ins in program.instructions():
        for op, kind in access_points(ins):
            if op.kind == "abs":
                points.append(TracePoint(ins.id, None, kind, 0, op.address))
                continue
            cells = res.resolve_operand(ins.id, op)
            if cells.touches_shared():
                points.append(TracePoint(ins.id, op.reg, kind, op.disp))
        if ins.kind in ("lock", "unlock"):
            access = "lock_acq" if ins.kind == "lock" else "lock_rel"
            op = ins.dst
            if op.kind == "reg":
                points.append(TracePoint(ins.id, op.reg, access))
            else:
                points.append(TracePoint(ins.id, None, access, 0, op.value))
        elif ins.kind == "spawn":
            points.append(TracePoint(ins.id, ins.dst.reg, "fork"))
        elif ins.kind == "join":
            op = ins.dst
            if op.kind == "reg":
                points.append(TracePoint(ins.id, op.reg, "join"))
            else:
                points.append(TracePoint(ins.id, None, "join", 0, op.value))
    return points
