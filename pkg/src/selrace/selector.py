"""Trace-point selection: must-race-free pruning and redundant elimination.

The final set is  t_trace = t_shared - t_raceFree - t_redundant, with
derived relations recorded so eliminated accesses can be rebuilt offline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .icfg import (
    ICFG,
    dominators,
    intra_cfg,
    postdominators,
    region_between,
    region_is_acyclic,
)
from .ir import Program
from .vsa import (
    TOP,
    ResolvedCells,
    TracePoint,
    VsaResult,
    find_shared_trace_points,
)

UNIVERSE = "universe"  # must-lockset lattice top for unreached joins
BACKTRACK_CAP = 64  # symbolic propagation depth cap per point


@dataclass
class LockSetResult:
    at: dict[str, frozenset] = field(default_factory=dict)  # iid -> lock identities
    warnings: list[str] = field(default_factory=list)

    def lockset(self, iid: str) -> frozenset:
        return self.at.get(iid, frozenset())


@dataclass(frozen=True)
class DerivedRelation:
    derived: TracePoint
    source: TracePoint
    delta: int  # value(derived.register) - value(source.register)
    distance: int  # static shortest-path instruction distance source -> derived
    between: frozenset  # instruction ids on paths strictly between them

    def to_json(self):
        return {
            "derived": self.derived.to_json(),
            "source": self.source.to_json(),
            "delta": self.delta,
            "distance": self.distance,
            "between": sorted(self.between),
        }


@dataclass
class SelectionReport:
    t_shared: list
    t_race_free: list
    t_redundant: list
    t_trace: list
    relations: list
    lock_warnings: list = field(default_factory=list)

    def counts(self):
        return {
            "t_shared": len(self.t_shared),
            "t_raceFree": len(self.t_race_free),
            "t_redundant": len(self.t_redundant),
            "t_trace": len(self.t_trace),
            "relations": len(self.relations),
        }

    def to_json(self):
        return {
            "t_shared": [t.to_json() for t in self.t_shared],
            "t_raceFree": [t.to_json() for t in self.t_race_free],
            "t_redundant": [t.to_json() for t in self.t_redundant],
            "t_trace": [t.to_json() for t in self.t_trace],
            "relations": [r.to_json() for r in self.relations],
            "counts": self.counts(),
            "lock_warnings": self.lock_warnings,
        }


# -- lock identities ----------------------------------------------------


def _lock_identity(res: VsaResult, ins) -> tuple | None:
    """A must-lock identity: the operand's value set as an exact singleton
    global address. Anything wider cannot support must-held reasoning."""
    op = ins.dst
    if op.kind == "imm":
        return ("global", op.value)
    vs = res.reg_vs(ins.id, op.reg)
    if vs.globals_ is TOP or vs.stacks is TOP or vs.heaps is TOP or vs.consts is TOP:
        return None
    if len(vs.globals_) == 1 and not vs.stacks and not vs.heaps and not vs.consts:
        return ("global", next(iter(vs.globals_)))
    return None


def compute_locksets(p: Program, icfg: ICFG, res: VsaResult) -> LockSetResult:
    """Intraprocedural forward must-hold dataflow; join is intersection.
    Calls pass locksets through unchanged (callee effects untracked)."""
    out = LockSetResult()
    for fn, body in p.functions.items():
        if not body:
            continue
        succs = intra_cfg(p, fn)
        preds: dict[str, list[str]] = {ins.id: [] for ins in body}
        for s, ds in succs.items():
            for d in ds:
                preds[d].append(s)
        entry = body[0].id
        state: dict[str, object] = {ins.id: UNIVERSE for ins in body}
        state[entry] = frozenset()
        changed = True
        while changed:
            changed = False
            for ins in body:
                iid = ins.id
                if iid == entry:
                    cur = frozenset()
                else:
                    cur = UNIVERSE
                    for pr in preds[iid]:
                        pout = _lock_transfer(p.instr(pr), state[pr], res, out)
                        if pout is UNIVERSE:
                            continue
                        cur = pout if cur is UNIVERSE else (cur & pout)
                    if cur is UNIVERSE:
                        cur = frozenset() if not preds[iid] else UNIVERSE
                if cur != state[iid]:
                    state[iid] = cur
                    changed = True
        for ins in body:
            s = state[ins.id]
            out.at[ins.id] = frozenset() if s is UNIVERSE else s
    return out


def _lock_transfer(ins, inset, res: VsaResult, result: LockSetResult):
    if inset is UNIVERSE:
        return UNIVERSE
    if ins.kind == "lock":
        ident = _lock_identity(res, ins)
        return inset | {ident} if ident is not None else inset
    if ins.kind == "unlock":
        ident = _lock_identity(res, ins)
        if ident is None:
            return frozenset()  # could release anything we think we hold
        if ident not in inset:
            msg = f"unlock without matching must-lock at {ins.id}"
            if msg not in result.warnings:
                result.warnings.append(msg)
        return inset - {ident}
    return inset


# -- the three race-freedom checks --------------------------------------


def _accessed_cells(res: VsaResult, p: Program, t: TracePoint) -> ResolvedCells:
    if t.register is None:
        return ResolvedCells(cells=[("global", (t.imm_addr or 0) + t.disp)])
    ins = p.instr(t.iid)
    op = ins.mem_operand()
    return res.resolve_operand(t.iid, op)


def not_alias(x: TracePoint, y: TracePoint, res: VsaResult, p: Program) -> bool:
    cx = _accessed_cells(res, p, x)
    cy = _accessed_cells(res, p, y)
    gx = {c for c in cx.cells if c[0] == "global"}
    gy = {c for c in cy.cells if c[0] == "global"}
    hx = {c for c in cx.cells if c[0] == "heap"}
    hy = {c for c in cy.cells if c[0] == "heap"}
    # Top on one side overlaps anything the other side may touch in that region
    if cx.top_global and (cy.top_global or gy):
        return False
    if cy.top_global and (cx.top_global or gx):
        return False
    if cx.top_heap and (cy.top_heap or hy):
        return False
    if cy.top_heap and (cx.top_heap or hx):
        return False
    return not (gx & gy) and not (hx & hy)


def not_write(x: TracePoint, y: TracePoint) -> bool:
    return x.access == "read" and y.access == "read"


def is_owned(x: TracePoint, res: VsaResult, p: Program) -> bool:
    """True iff x only touches heap objects allocated in its own function
    that never escape via calls or shared memory."""
    if x.register is None:
        return False
    vs = res.reg_vs(x.iid, x.register)
    if any(part is TOP for part in (vs.globals_, vs.stacks, vs.heaps, vs.consts)):
        return False
    if vs.globals_ or vs.stacks or vs.consts or not vs.heaps:
        return False
    fn = x.iid.split(":", 1)[0]
    site_fn = {ins.site: ins.function for ins in p.instructions() if ins.kind == "alloc"}
    for site in vs.heaps:
        if site_fn.get(site) != fn:
            return False
        if _escapes_via_call(site, fn, res, p) or _escapes_to_memory(site, res):
            return False
    return True


def _escapes_via_call(site: str, fn: str, res: VsaResult, p: Program) -> bool:
    # registers are the calling convention here: any live value set holding
    # the site at a call hands it to the callee
    for ins in p.functions[fn]:
        if ins.kind != "call":
            continue
        for key, vs in res.before(ins.id).items():
            if key == ("reg", "fp") or key == ("reg", "sp"):
                continue
            if vs.heaps is TOP or site in (vs.heaps if vs.heaps is not TOP else ()):
                return True
    return False


def _escapes_to_memory(site: str, res: VsaResult) -> bool:
    for vs in res.shared.values():
        if vs.heaps is TOP or site in vs.heaps:
            return True
    return res.shared_top.heaps is TOP or site in res.shared_top.heaps


def not_concurrent(
    x: TracePoint,
    y: TracePoint,
    res: VsaResult,
    p: Program,
    locks: LockSetResult,
) -> bool:
    if is_owned(x, res, p) or is_owned(y, res, p):
        return True
    return bool(locks.lockset(x.iid) & locks.lockset(y.iid))


def must_race_free(
    t_shared: list,
    res: VsaResult,
    p: Program,
    locks: LockSetResult,
):
    """Partition memory points into (t_raceFree, t_mayRace); sync points
    pass through untouched. The three checks are symmetric, so a plain
    pairwise scan gives the same answer as the worklist formulation."""
    memory = [t for t in t_shared if t.is_memory]
    sync = [t for t in t_shared if t.is_sync]
    race_free, may_race = [], []
    for x in memory:
        ok = True
        for y in memory:
            if not_alias(x, y, res, p) or not_concurrent(x, y, res, p, locks) or not_write(x, y):
                continue
            ok = False
            break
        (race_free if ok else may_race).append(x)
    return race_free, may_race + sync


# -- redundant register elimination -------------------------------------

OPAQUE = "opaque"


def _symbolic_states(p: Program, fn: str, res: VsaResult):
    """Forward symbolic evaluation per function. A register's value is
    (base symbol, delta); equal symbols denote equal runtime values.
    Loads are versioned by the set of stores that may have hit their cell."""
    body = p.functions[fn]
    succs = intra_cfg(p, fn)
    preds: dict[str, list[str]] = {ins.id: [] for ins in body}
    for s, ds in succs.items():
        for d in ds:
            preds[d].append(s)

    entry = body[0].id
    regs0 = {r: ((("entry", r)), 0) for r in [f"r{i}" for i in range(8)] + ["fp", "sp"]}
    in_regs = {entry: dict(regs0)}
    in_vers: dict[str, dict] = {entry: {}}
    out_regs: dict[str, dict] = {}
    out_vers: dict[str, dict] = {}

    def store_cell(ins):
        cells = res.resolve_operand(ins.id, ins.dst)
        if not cells.any_top and len(cells.cells) == 1:
            return cells.cells[0]
        return "*"

    def load_symbol(ins, op, vers):
        cells = res.resolve_operand(ins.id, op)
        if cells.any_top or len(cells.cells) != 1:
            return ((OPAQUE, ins.id, "load"), 0)
        cell = cells.cells[0]
        ver = frozenset(vers.get(cell, frozenset()) | vers.get("*", frozenset()))
        return (("load", cell, ver), 0)

    def transfer(ins, regs, vers):
        regs = dict(regs)
        vers = dict(vers)
        k = ins.kind
        if k == "mov":
            if ins.dst.kind == "reg":
                src = ins.src
                if src.kind == "imm":
                    regs[ins.dst.reg] = (("const",), src.value)
                elif src.kind == "reg":
                    regs[ins.dst.reg] = regs.get(src.reg, ((OPAQUE, ins.id, src.reg), 0))
                else:
                    regs[ins.dst.reg] = load_symbol(ins, src, vers)
            else:
                cell = store_cell(ins)
                vers[cell] = frozenset(vers.get(cell, frozenset()) | {ins.id})
        elif k in ("add", "sub"):
            if ins.src.kind == "imm" and not ins.src.global_addr:
                base, delta = regs.get(ins.dst.reg, ((OPAQUE, ins.id, ins.dst.reg), 0))
                d = ins.src.value if k == "add" else -ins.src.value
                regs[ins.dst.reg] = (base, delta + d)
            else:
                regs[ins.dst.reg] = ((OPAQUE, ins.id, ins.dst.reg), 0)
        elif k == "alloc":
            regs[ins.dst.reg] = (("alloc", ins.id), 0)
        elif k == "spawn":
            regs[ins.dst.reg] = (("spawned", ins.id), 0)
        elif k == "call":
            # callee may clobber every register and any memory
            for r in list(regs):
                if r not in ("fp", "sp"):
                    regs[r] = ((OPAQUE, ins.id, r), 0)
            vers["*"] = frozenset(vers.get("*", frozenset()) | {ins.id})
        return regs, vers

    changed = True
    rounds = 0
    while changed:
        changed = False
        rounds += 1
        if rounds > BACKTRACK_CAP:
            return {}  # give up; every point in this function stays instrumented
        for ins in body:
            iid = ins.id
            if iid != entry:
                regs: dict | None = None
                vers: dict = {}
                for pr in preds[iid]:
                    if pr not in out_regs:
                        continue
                    pregs, pvers = out_regs[pr], out_vers[pr]
                    if regs is None:
                        regs = dict(pregs)
                        vers = dict(pvers)
                    else:
                        merged = {}
                        for r in set(regs) | set(pregs):
                            a, b = regs.get(r), pregs.get(r)
                            merged[r] = a if a == b else ((OPAQUE, iid, r), 0)
                        regs = merged
                        for cell in set(vers) | set(pvers):
                            vers[cell] = frozenset(
                                vers.get(cell, frozenset()) | pvers.get(cell, frozenset())
                            )
                if regs is None:
                    continue
                if in_regs.get(iid) != regs or in_vers.get(iid) != vers:
                    in_regs[iid] = regs
                    in_vers[iid] = vers
                    changed = True
            if iid in in_regs:
                o = transfer(ins, in_regs[iid], in_vers[iid])
                if out_regs.get(iid) != o[0] or out_vers.get(iid) != o[1]:
                    out_regs[iid], out_vers[iid] = o
                    changed = True
    return in_regs


def redundant_elimination(points: list, p: Program, icfg: ICFG, res: VsaResult):
    """Keeps one representative per statically-equal address expression;
    the rest become derived relations reconstructable offline."""
    kept: list[TracePoint] = []
    relations: list[DerivedRelation] = []
    by_fn: dict[str, list[TracePoint]] = {}
    for t in points:
        if t.is_memory and t.register is not None:
            by_fn.setdefault(t.iid.split(":", 1)[0], []).append(t)
        else:
            kept.append(t)

    # instructions carrying any trace point or sync op: a relation region may
    # not need them clean, but positional reconstruction in the decoder relies
    # on knowing which recorded events sit between source and derived
    for fn, pts in by_fn.items():
        body = p.functions[fn]
        index = {ins.id: i for i, ins in enumerate(body)}
        doms = dominators(p, fn)
        pdoms = postdominators(p, fn)
        syms = _symbolic_states(p, fn, res)
        pts_sorted = sorted(pts, key=lambda t: (index[t.iid], t.register or ""))
        kept_here: list[tuple[TracePoint, tuple, int]] = []
        for t in pts_sorted:
            expr = syms.get(t.iid, {}).get(t.register)
            rel = None
            if expr is not None:
                base, delta = expr
                for (src_pt, src_base, src_delta) in kept_here:
                    if src_base != base:
                        continue
                    if src_pt.iid not in doms.get(t.iid, set()):
                        continue
                    if t.iid not in pdoms.get(src_pt.iid, set()):
                        continue
                    region = region_between(p, fn, src_pt.iid, t.iid)
                    if not region_is_acyclic(p, fn, region, src_pt.iid, t.iid):
                        continue
                    dist = _shortest_distance(p, fn, src_pt.iid, t.iid)
                    rel = DerivedRelation(
                        derived=t,
                        source=src_pt,
                        delta=delta - src_delta,
                        distance=dist,
                        between=frozenset(region),
                    )
                    break
            if rel is None:
                kept.append(t)
                if expr is not None and expr[0][0] != OPAQUE:
                    kept_here.append((t, expr[0], expr[1]))
            else:
                relations.append(rel)
    redundant = [r.derived for r in relations]
    return kept, redundant, relations


def _shortest_distance(p: Program, fn: str, src: str, dst: str) -> int:
    succs = intra_cfg(p, fn)
    from collections import deque

    q = deque([(src, 0)])
    seen = {src}
    while q:
        n, d = q.popleft()
        if n == dst:
            return d
        for m in succs.get(n, []):
            if m not in seen:
                seen.add(m)
                q.append((m, d + 1))
    return 1


def select(p: Program, res: VsaResult, icfg: ICFG | None = None) -> SelectionReport:
    """Full pipeline: t_trace = t_shared - t_raceFree - t_redundant."""
    if icfg is None:
        icfg = res.icfg
    t_shared = find_shared_trace_points(res, p)
    locks = compute_locksets(p, icfg, res)
    t_race_free, t_may_race = must_race_free(t_shared, res, p, locks)
    t_trace, t_redundant, relations = redundant_elimination(t_may_race, p, icfg, res)
    return SelectionReport(
        t_shared=t_shared,
        t_race_free=t_race_free,
        t_redundant=t_redundant,
        t_trace=t_trace,
        relations=relations,
        lock_warnings=locks.warnings,
    )
