"""Interprocedural control-flow graph over instruction ids.

Edge kinds:
  intra  - fallthrough / branch within a function
  call   - call site -> callee entry
  ret    - callee ret -> return site (instruction after the call)
  spawn  - spawn site -> spawned function entry (thread creation, not flow)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Program


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: str  # intra | call | ret | spawn


@dataclass
class ICFG:
    nodes: list[str]
    succs: dict[str, list[Edge]] = field(default_factory=dict)
    preds: dict[str, list[Edge]] = field(default_factory=dict)

    def add_edge(self, src: str, dst: str, kind: str) -> None:
        e = Edge(src, dst, kind)
        self.succs.setdefault(src, []).append(e)
        self.preds.setdefault(dst, []).append(e)

    def successors(self, iid: str, kinds=None):
        return [e for e in self.succs.get(iid, []) if kinds is None or e.kind in kinds]

    def intra_successors(self, iid: str):
        """Successors for intraprocedural analyses; calls fall through."""
        out = []
        for e in self.succs.get(iid, []):
            if e.kind == "intra":
                out.append(e.dst)
        return out


def build_icfg(p: Program) -> ICFG:
    g = ICFG(nodes=[ins.id for ins in p.instructions()])
    for fn, body in p.functions.items():
        labels = {ins.label: idx for idx, ins in enumerate(body)}
        for idx, ins in enumerate(body):
            nxt = body[idx + 1].id if idx + 1 < len(body) else None
            if ins.kind in ("ret", "halt"):
                continue
            if ins.kind == "jmp":
                g.add_edge(ins.id, body[labels[ins.target]].id, "intra")
                continue
            # fallthrough first, then branch target (deterministic order)
            if nxt is not None:
                g.add_edge(ins.id, nxt, "intra")
            if ins.kind in ("je", "jne"):
                g.add_edge(ins.id, body[labels[ins.target]].id, "intra")
            elif ins.kind == "call":
                callee = p.functions[ins.target]
                if callee:
                    g.add_edge(ins.id, callee[0].id, "call")
                    if nxt is not None:
                        for ret in callee:
                            if ret.kind == "ret":
                                g.add_edge(ret.id, nxt, "ret")
            elif ins.kind == "spawn":
                callee = p.functions[ins.target]
                if callee:
                    g.add_edge(ins.id, callee[0].id, "spawn")
    return g


def intra_cfg(p: Program, fn: str) -> dict[str, list[str]]:
    """Per-function successor map; call instructions fall through."""
    body = p.functions[fn]
    labels = {ins.label: idx for idx, ins in enumerate(body)}
    succs: dict[str, list[str]] = {ins.id: [] for ins in body}
    for idx, ins in enumerate(body):
        nxt = body[idx + 1].id if idx + 1 < len(body) else None
        if ins.kind in ("ret", "halt"):
            continue
        if ins.kind == "jmp":
            succs[ins.id].append(body[labels[ins.target]].id)
            continue
        if nxt is not None:
            succs[ins.id].append(nxt)
        if ins.kind in ("je", "jne"):
            succs[ins.id].append(body[labels[ins.target]].id)
    return succs


def dominators(p: Program, fn: str) -> dict[str, set[str]]:
    """Classic iterative dominator sets over the intra CFG."""
    body = p.functions[fn]
    if not body:
        return {}
    succs = intra_cfg(p, fn)
    preds: dict[str, list[str]] = {ins.id: [] for ins in body}
    for s, outs in succs.items():
        for d in outs:
            preds[d].append(s)
    entry = body[0].id
    all_nodes = set(succs)
    dom = {n: (all_nodes if n != entry else {entry}) for n in succs}
    changed = True
    while changed:
        changed = False
        for ins in body:
            n = ins.id
            if n == entry:
                continue
            new = set(all_nodes)
            any_pred = False
            for pr in preds[n]:
                new &= dom[pr]
                any_pred = True
            if not any_pred:
                new = set()
            new |= {n}
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


def postdominators(p: Program, fn: str) -> dict[str, set[str]]:
    """Postdominator sets; exits are ret/halt (virtual common sink)."""
    body = p.functions[fn]
    if not body:
        return {}
    succs = intra_cfg(p, fn)
    exits = [ins.id for ins in body if ins.kind in ("ret", "halt") or not succs[ins.id]]
    all_nodes = set(succs)
    pdom = {n: (all_nodes if n not in exits else {n}) for n in succs}
    changed = True
    while changed:
        changed = False
        for ins in reversed(body):
            n = ins.id
            if n in exits:
                continue
            outs = succs[n]
            new = set(all_nodes)
            for s in outs:
                new &= pdom[s]
            if not outs:
                new = set()
            new |= {n}
            if new != pdom[n]:
                pdom[n] = new
                changed = True
    return pdom


def region_between(p: Program, fn: str, src: str, dst: str) -> set[str]:
    """Instructions on some path strictly between src and dst (intra CFG)."""
    succs = intra_cfg(p, fn)
    preds: dict[str, list[str]] = {n: [] for n in succs}
    for s, outs in succs.items():
        for d in outs:
            preds[d].append(s)

    def closure(start, nbrs):
        seen, stack = set(), [start]
        while stack:
            n = stack.pop()
            for m in nbrs[n]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return seen

    fwd = closure(src, succs)
    bwd = closure(dst, preds)
    return (fwd & bwd) - {src, dst}


def region_is_acyclic(p: Program, fn: str, region: set[str], src: str, dst: str) -> bool:
    succs = intra_cfg(p, fn)
    nodes = region | {src, dst}
    color: dict[str, int] = {}

    def dfs(n):
        if n == dst:
            color[n] = 2
            return True
        color[n] = 1
        for m in succs.get(n, []):
            if m not in nodes:
                continue
            c = color.get(m)
            if c == 1:
                return False
            if c is None and not dfs(m):
                return False
        color[n] = 2
        return True

    return dfs(src)
