"""Deterministic multithreaded interpreter with simulated trace hardware.

One global interleaving loop stands in for CPUs plus the trace unit:
virtual CPUs run threads under a seeded quantum scheduler, every executed
`ptwrite` emits timing + payload packets into that CPU's stream, context
switches produce sideband records, and a full ground-truth log is kept
for oracle tests. Behavior is a pure function of (program, config).

Ptwrite instructions are executed fused with their origin instruction
(one scheduler step covers prefix ptwrites, the instruction, and any
post-attached ptwrite), so the thread interleaving of the original
instructions is identical across uninstrumented, selective, and naive
builds for the same seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ir import Operand, Program
from .trace_io import IDLE_TID, Packet, SidebandRecord

STACK_BASE = 0x1000_0000
STACK_SPAN = 0x1_0000  # per-thread stack region
FRAME_SIZE = 256
HEAP_BASE = 0x2000_0000
ALLOC_SIZE = 64
MASK64 = (1 << 64) - 1


class SimError(Exception):
    pass


class DeadlockError(SimError):
    def __init__(self, blocked):
        super().__init__(f"deadlock: all runnable threads blocked: {blocked}")
        self.blocked = blocked


@dataclass
class SimConfig:
    seed: int = 0
    cpus: int = 1
    quantum: int = 8
    cycles_per_instr: int = 3
    buffer_capacity: int | None = None  # PTW budget per drain window; None = unlimited
    tsc_interval: int = 64  # packets between TSC re-emissions; also window length (cycles)

    def __post_init__(self):
        if self.cpus < 1 or self.quantum < 1 or self.cycles_per_instr < 1:
            raise ValueError("cpus, quantum and cycles_per_instr must be positive")
        if self.tsc_interval < 1:
            raise ValueError("tsc_interval must be positive")

    def to_json(self):
        return {
            "seed": self.seed,
            "cpus": self.cpus,
            "quantum": self.quantum,
            "cycles_per_instr": self.cycles_per_instr,
            "buffer_capacity": self.buffer_capacity,
            "tsc_interval": self.tsc_interval,
        }


@dataclass
class LossWindow:
    cpu: int
    start: int
    end: int
    dropped: int

    def to_json(self):
        return {"cpu": self.cpu, "start": self.start, "end": self.end, "dropped": self.dropped}


@dataclass
class RunArtifacts:
    streams: list
    sideband: list
    ground_truth: list  # dicts: ts/tid/iid/kind/addr/value/...
    loss_log: list
    meta: dict
    final_memory: dict

    def emitted_ptw(self) -> int:
        return sum(1 for s in self.streams for p in s if p.kind == "PTW")

    def dropped_ptw(self) -> int:
        return sum(w.dropped for w in self.loss_log)


def loss_stats(a: RunArtifacts) -> dict:
    dropped = a.dropped_ptw()
    emitted = a.emitted_ptw()
    total = dropped + emitted
    return {
        "loss_percent": (100.0 * dropped / total) if total else 0.0,
        "loss_times": len(a.loss_log),
    }


class _Thread:
    __slots__ = ("tid", "cpu", "regs", "frames", "eq", "status", "block_arg", "stack_base")

    def __init__(self, tid, cpu, fn, stack_base):
        self.tid = tid
        self.cpu = cpu
        self.regs = {r: 0 for r in [f"r{i}" for i in range(8)]}
        self.stack_base = stack_base
        self.regs["fp"] = stack_base
        self.regs["sp"] = stack_base
        self.frames = [{"fn": fn, "idx": 0, "fp": stack_base}]
        self.eq = False
        self.status = "run"  # run | lock | join | done
        self.block_arg = None

    @property
    def done(self):
        return self.status == "done"


class _Sim:
    def __init__(self, program: Program, cfg: SimConfig):
        self.p = program
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.clock = 0
        self.memory: dict[int, int] = {}
        for addr, size in program.globals:
            for a in range(addr, addr + size, 8):
                self.memory[a] = 0
        self.locks: dict[int, int | None] = {}
        self.heap_next = HEAP_BASE
        self.allocations: list[tuple[int, str]] = []  # (base, site)
        self.threads: dict[int, _Thread] = {}
        self.next_tid = 0
        self.ground_truth: list[dict] = []
        self.streams: list[list[Packet]] = [[] for _ in range(cfg.cpus)]
        self.sideband: list[SidebandRecord] = []
        self.loss_log: list[LossWindow] = []
        self._open_loss: dict[int, LossWindow] = {}
        self._last_timing = [0] * cfg.cpus
        self._since_tsc = [0] * cfg.cpus
        self._ptw_window = [(-1, 0)] * cfg.cpus  # (window index, ptw count)
        # label -> index, retargeted to the first prefix ptwrite of the label
        self.label_index: dict[str, dict[str, int]] = {}
        for fn, body in program.functions.items():
            idx_map = {}
            for i, ins in enumerate(body):
                if ins.kind == "ptwrite":
                    continue
                j = i
                while j > 0 and body[j - 1].kind == "ptwrite" and not body[j - 1].post:
                    j -= 1
                idx_map[ins.label] = j
            self.label_index[fn] = idx_map

    # -- threads ---------------------------------------------------------

    def spawn_thread(self, fn: str) -> int:
        tid = self.next_tid
        self.next_tid += 1
        th = _Thread(tid, tid % self.cfg.cpus, fn, STACK_BASE + tid * STACK_SPAN)
        self.threads[tid] = th
        return tid

    # -- operand evaluation ---------------------------------------------

    def addr_of(self, th: _Thread, op: Operand) -> int:
        if op.kind == "mem":
            return (th.regs[op.reg] + op.disp) & MASK64
        if op.kind == "abs":
            return op.address
        raise AssertionError(op.kind)

    def value_of(self, th: _Thread, op: Operand) -> int:
        if op.kind == "imm":
            return op.value & MASK64
        if op.kind == "reg":
            return th.regs[op.reg]
        return self.memory.get(self.addr_of(th, op), 0)

    def classify_addr(self, addr: int):
        if self.p.in_global_range(addr):
            return ("global", addr)
        for base, site in self.allocations:
            if base <= addr < base + ALLOC_SIZE:
                return ("heap", site)
        return ("stack", addr)

    # -- trace emission --------------------------------------------------

    def emit_ptw(self, cpu: int, payload: int, ptw_id: int):
        cfg = self.cfg
        window = self.clock // cfg.tsc_interval
        widx, count = self._ptw_window[cpu]
        if widx != window:
            widx, count = window, 0
        if cfg.buffer_capacity is not None and count >= cfg.buffer_capacity:
            self._ptw_window[cpu] = (widx, count + 1)
            open_w = self._open_loss.get(cpu)
            wstart, wend = window * cfg.tsc_interval, (window + 1) * cfg.tsc_interval
            if open_w is not None and open_w.start == wstart:
                open_w.dropped += 1
                open_w.end = wend
            else:
                w = LossWindow(cpu, wstart, wend, 1)
                self.loss_log.append(w)
                self._open_loss[cpu] = w
            return False
        stream = self.streams[cpu]
        if not stream or self._since_tsc[cpu] >= cfg.tsc_interval:
            stream.append(Packet("TSC", self.clock))
            self._last_timing[cpu] = self.clock
            self._since_tsc[cpu] = 0
        if self.clock > self._last_timing[cpu]:
            stream.append(Packet("CYC", self.clock - self._last_timing[cpu]))
            self._last_timing[cpu] = self.clock
            self._since_tsc[cpu] += 1
        stream.append(Packet("PTW", payload & MASK64, ptw_id))
        self._since_tsc[cpu] += 1
        self._ptw_window[cpu] = (widx, count + 1)
        return True

    def record(self, th, iid, kind, addr=0, value=0, base_reg=None, base_val=0):
        frame = th.frames[-1] if th.frames else {"fn": "", "fp": 0}
        self.ground_truth.append(
            {
                "ts": self.clock,
                "tid": th.tid,
                "iid": iid,
                "kind": kind,
                "addr": addr,
                "value": value,
                "base_reg": base_reg,
                "base_val": base_val,
                "fn": frame["fn"],
                "fp": frame["fp"],
            }
        )

    # -- execution -------------------------------------------------------

    def real_instr_at(self, th: _Thread):
        """The next non-ptwrite instruction for this thread, or None."""
        frame = th.frames[-1]
        body = self.p.functions[frame["fn"]]
        i = frame["idx"]
        while i < len(body) and body[i].kind == "ptwrite":
            i += 1
        return body[i] if i < len(body) else None

    def can_run_now(self, th: _Thread) -> bool:
        if th.status == "run":
            return True
        if th.status == "lock":
            return self.locks.get(th.block_arg) is None
        if th.status == "join":
            target = self.threads.get(th.block_arg)
            return target is not None and target.done
        return False

    def step(self, th: _Thread) -> bool:
        """Execute one fused step; returns False if the thread blocked."""
        cfg = self.cfg
        frame = th.frames[-1]
        body = self.p.functions[frame["fn"]]
        idx = frame["idx"]
        if idx >= len(body):
            th.status = "done"
            return True

        # pre-check blocking so prefix ptwrites only run on success
        real = self.real_instr_at(th)
        if real is not None:
            if real.kind == "lock":
                addr = self.value_of(th, real.dst)
                owner = self.locks.get(addr)
                if owner is not None and owner != th.tid:
                    th.status, th.block_arg = "lock", addr
                    return False
            elif real.kind == "join":
                target_tid = self.value_of(th, real.dst)
                target = self.threads.get(target_tid)
                if target is None or not target.done:
                    th.status, th.block_arg = "join", target_tid
                    return False
        th.status, th.block_arg = "run", None

        # prefix ptwrites
        while idx < len(body) and body[idx].kind == "ptwrite":
            self._exec_ptwrite(th, body[idx])
            idx += 1
        if idx >= len(body):
            th.status = "done"
            return True
        ins = body[idx]
        self.clock += cfg.cycles_per_instr
        next_idx = idx + 1
        k = ins.kind

        if k == "mov":
            val = self.value_of(th, ins.src)
            if ins.dst.kind == "reg":
                th.regs[ins.dst.reg] = val
                src_mem = ins.src if ins.src.kind in ("mem", "abs") else None
                if src_mem is not None:
                    self._record_access(th, ins, src_mem, "read", val)
                else:
                    self.record(th, ins.id, "other")
            else:
                addr = self.addr_of(th, ins.dst)
                self.memory[addr] = val
                self._record_access(th, ins, ins.dst, "write", val)
        elif k in ("add", "sub"):
            val = self.value_of(th, ins.src)
            cur = th.regs[ins.dst.reg]
            th.regs[ins.dst.reg] = (cur + val if k == "add" else cur - val) & MASK64
            if ins.src.kind in ("mem", "abs"):
                self._record_access(th, ins, ins.src, "read", val)
            else:
                self.record(th, ins.id, "other")
        elif k == "cmp":
            va, vb = self.value_of(th, ins.dst), self.value_of(th, ins.src)
            th.eq = va == vb
            m = ins.mem_operand()
            if m is not None:
                self._record_access(th, ins, m, "read", self.value_of(th, m))
            else:
                self.record(th, ins.id, "other")
        elif k in ("jmp", "je", "jne"):
            if k == "jmp":
                taken = True
            elif k == "je":
                taken = th.eq
            else:
                taken = not th.eq
            self.record(th, ins.id, "other")
            if taken:
                frame["idx"] = self.label_index[frame["fn"]][ins.target]
                return True
        elif k == "call":
            self.record(th, ins.id, "other")
            frame["idx"] = next_idx
            new_fp = th.regs["fp"] - FRAME_SIZE
            th.regs["fp"] = new_fp
            th.regs["sp"] = new_fp
            th.frames.append({"fn": ins.target, "idx": 0, "fp": new_fp})
            return True
        elif k == "ret":
            self.record(th, ins.id, "other")
            th.frames.pop()
            if not th.frames:
                th.status = "done"
            else:
                th.regs["fp"] = th.frames[-1]["fp"]
                th.regs["sp"] = th.frames[-1]["fp"]
            return True
        elif k == "halt":
            self.record(th, ins.id, "other")
            th.frames = []
            th.status = "done"
            return True
        elif k == "alloc":
            addr = self.heap_next
            self.heap_next += ALLOC_SIZE
            self.allocations.append((addr, ins.site))
            th.regs[ins.dst.reg] = addr
            self.record(th, ins.id, "alloc", addr=addr)
        elif k == "lock":
            addr = self.value_of(th, ins.dst)
            self.locks[addr] = th.tid
            self.record(th, ins.id, "lock_acq", addr=addr)
        elif k == "unlock":
            addr = self.value_of(th, ins.dst)
            self.locks[addr] = None
            self.record(th, ins.id, "lock_rel", addr=addr)
        elif k == "spawn":
            child = self.spawn_thread(ins.target)
            th.regs[ins.dst.reg] = child
            self.record(th, ins.id, "fork", addr=child, value=child)
            # post-attached ptwrite records the child handle
            while next_idx < len(body) and body[next_idx].kind == "ptwrite" and body[next_idx].post:
                self._exec_ptwrite(th, body[next_idx])
                next_idx += 1
        elif k == "join":
            target_tid = self.value_of(th, ins.dst)
            self.record(th, ins.id, "join", addr=target_tid, value=target_tid)
        else:
            raise SimError(f"unexpected instruction kind {k} at {ins.id}")

        frame["idx"] = next_idx
        if next_idx >= len(body) and k not in ("jmp",):
            # falling off the end of a function body ends the activation
            th.frames.pop()
            if not th.frames:
                th.status = "done"
            else:
                th.regs["fp"] = th.frames[-1]["fp"]
                th.regs["sp"] = th.frames[-1]["fp"]
        return True

    def _record_access(self, th, ins, op, kind, val):
        addr = self.addr_of(th, op)
        base_reg = op.reg if op.kind == "mem" else None
        base_val = th.regs[op.reg] if op.kind == "mem" else 0
        self.record(th, ins.id, kind, addr=addr, value=val, base_reg=base_reg, base_val=base_val)

    def _exec_ptwrite(self, th: _Thread, ins):
        self.clock += self.cfg.cycles_per_instr
        payload = self.value_of(th, ins.dst)
        self.record(th, ins.id, "ptw", value=payload)
        self.emit_ptw(th.cpu, payload, ins.ptw_id)

    # -- scheduler -------------------------------------------------------

    def run(self) -> RunArtifacts:
        cfg = self.cfg
        self.spawn_thread(self.p.entry)
        current: list[_Thread | None] = [None] * cfg.cpus
        quantum = [0] * cfg.cpus
        cur_tid = [IDLE_TID] * cfg.cpus

        last_idx: list[int | None] = [None] * cfg.cpus

        def switch(cpu, new_tid):
            if cur_tid[cpu] == new_tid:
                return
            i = last_idx[cpu]
            if i is not None and self.sideband[i].timestamp == self.clock:
                # coalesce same-instant transitions so per-CPU timestamps
                # stay strictly increasing
                prev = self.sideband[i]
                self.sideband[i] = SidebandRecord(self.clock, cpu, prev.tid_out, new_tid)
            else:
                self.sideband.append(SidebandRecord(self.clock, cpu, cur_tid[cpu], new_tid))
                last_idx[cpu] = len(self.sideband) - 1
            cur_tid[cpu] = new_tid

        while True:
            unfinished = [t for t in self.threads.values() if not t.done]
            if not unfinished:
                break
            progressed = False
            for cpu in range(cfg.cpus):
                th = current[cpu]
                if th is not None and th.done:
                    switch(cpu, IDLE_TID)
                    current[cpu] = None
                    th = None
                if th is None or quantum[cpu] <= 0 or not self.can_run_now(th):
                    cands = sorted(
                        t.tid
                        for t in self.threads.values()
                        if t.cpu == cpu and not t.done and self.can_run_now(t)
                    )
                    if not cands:
                        if current[cpu] is not None:
                            switch(cpu, IDLE_TID)
                            current[cpu] = None
                        continue
                    pick = cands[self.rng.randrange(len(cands))]
                    switch(cpu, pick)
                    current[cpu] = self.threads[pick]
                    quantum[cpu] = cfg.quantum
                    th = current[cpu]
                if self.step(th):
                    progressed = True
                    quantum[cpu] -= 1
                else:
                    switch(cpu, IDLE_TID)
                    current[cpu] = None
                if th.done:
                    switch(cpu, IDLE_TID)
                    current[cpu] = None
            if not progressed:
                # a step may have just blocked; only a state where nothing
                # can ever run again is a deadlock
                runnable = any(
                    self.can_run_now(t) for t in self.threads.values() if not t.done
                )
                if not runnable:
                    blocked = sorted(
                        t.tid for t in self.threads.values() if not t.done
                    )
                    raise DeadlockError(blocked)

        meta = {
            "config": cfg.to_json(),
            "threads": {str(t.tid): {"cpu": t.cpu} for t in self.threads.values()},
            "entry": self.p.entry,
        }
        return RunArtifacts(
            streams=self.streams,
            sideband=self.sideband,
            ground_truth=self.ground_truth,
            loss_log=self.loss_log,
            meta=meta,
            final_memory=dict(self.memory),
        )


def run(program: Program, cfg: SimConfig) -> RunArtifacts:
    """Execute the (possibly instrumented) program; fully deterministic."""
    return _Sim(program, cfg).run()
