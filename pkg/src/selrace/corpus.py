"""Seeded generator for well-formed concurrent test programs.

Programs are assembled from a small set of behavior blocks (lock-guarded
counters, unguarded shared accesses, thread-owned heap loops, pure stack
work, derived address pairs) so that every static analysis feature and
both race outcomes are exercised. Generation is a pure function of the
seed. All generated programs are deadlock free by construction: locks
are always released in straight-line code and joins only target handles
spawned earlier by the same thread.
"""

from __future__ import annotations

import random

from .ir import Program, parse_program

DATA_GLOBALS = [512, 520, 528, 536]
LOCK_GLOBALS = [1024, 1032]


def _locked_counter(g: int, lk: int, tmp: str) -> list[str]:
    return [
        f"lock g{lk}",
        f"mov {tmp}, [g{g}]",
        f"add {tmp}, 1",
        f"mov [g{g}], {tmp}",
        f"unlock g{lk}",
    ]


def _unguarded_write(g: int, val: int) -> list[str]:
    return [f"mov [g{g}], {val}"]


def _unguarded_read(g: int, tmp: str) -> list[str]:
    return [f"mov {tmp}, [g{g}]"]


def _owned_heap_loop(site: str, n: int, base: str, ctr: str, lbl: str) -> list[str]:
    return [
        f"alloc {base}, @{site}",
        f"mov {ctr}, 0",
        f"{lbl}: mov [{base}], {ctr}",
        f"add {ctr}, 1",
        f"cmp {ctr}, {n}",
        f"jne {lbl}",
    ]


def _stack_work(tmp: str) -> list[str]:
    return [
        "mov [fp-8], 41",
        f"mov {tmp}, [fp-8]",
        f"add {tmp}, 1",
        f"mov [fp-16], {tmp}",
    ]


def _derived_pair(g: int, base: str, tmp: str) -> list[str]:
    # two accesses off one base register; the second is reconstructible
    return [
        f"mov {base}, g{g}",
        f"mov [{base}], 3",
        f"mov [{base}+8], 5",
        f"mov {tmp}, [{base}]",
    ]


def _worker_body(rng: random.Random, wname: str) -> list[str]:
    lines: list[str] = []
    blocks = rng.randint(2, 4)
    for b in range(blocks):
        kind = rng.choice(
            ["locked", "uwrite", "uread", "heap", "stack", "derived"]
        )
        if kind == "locked":
            lines += _locked_counter(rng.choice(DATA_GLOBALS[:2]), rng.choice(LOCK_GLOBALS), "r0")
        elif kind == "uwrite":
            lines += _unguarded_write(rng.choice(DATA_GLOBALS[2:]), rng.randint(1, 99))
        elif kind == "uread":
            lines += _unguarded_read(rng.choice(DATA_GLOBALS[2:]), "r1")
        elif kind == "heap":
            lines += _owned_heap_loop(
                f"{wname}_s{b}", rng.randint(2, 5), "r2", "r3", f"L{b}"
            )
        elif kind == "stack":
            lines += _stack_work("r4")
        else:
            # +8 must stay inside declared global storage
            lines += _derived_pair(rng.choice(DATA_GLOBALS[:-1]), "r1", "r4")
    lines.append("ret")
    return lines


def generate_program(seed: int) -> Program:
    """One random but well-formed concurrent program."""
    rng = random.Random(seed)
    n_workers = rng.randint(1, 3)
    reuse = n_workers > 1 and rng.random() < 0.3  # same fn spawned twice

    worker_names = []
    functions = {}
    for i in range(n_workers):
        if reuse and i > 0:
            worker_names.append(worker_names[0])
            continue
        name = f"worker{i}"
        worker_names.append(name)
        functions[name] = _worker_body(rng, name)

    handles = [f"r{5 + i}" for i in range(n_workers)]
    main = [f"spawn {w}, {h}" for w, h in zip(worker_names, handles)]
    if rng.random() < 0.4:
        main += _unguarded_write(rng.choice(DATA_GLOBALS[2:]), 7)
    join_mode = rng.choice(["all", "none", "some"])
    to_join = {
        "all": handles,
        "none": [],
        "some": handles[: max(1, n_workers // 2)],
    }[join_mode]
    main += [f"join {h}" for h in to_join]
    if rng.random() < 0.4:
        main += _unguarded_read(rng.choice(DATA_GLOBALS[2:]), "r0")
    main.append("halt")

    src = [f"global g{g} size 8" for g in DATA_GLOBALS + LOCK_GLOBALS]
    src.append("fn main {")
    src += [f"  {line}" for line in main]
    src.append("}")
    for name in dict.fromkeys(worker_names):
        src.append(f"fn {name} {{")
        src += [f"  {line}" for line in functions[name]]
        src.append("}")
    return parse_program("\n".join(src) + "\n")


def generate_corpus(n: int, base_seed: int = 0) -> list[tuple[str, Program]]:
    return [(f"gen{base_seed}_{i}", generate_program(base_seed * 10_000 + i)) for i in range(n)]


# -- hand-written fixtures ----------------------------------------------

TWO_WRITERS = """
global g512 size 8
fn main {
  spawn worker, r5
  spawn worker, r6
  join r5
  join r6
  halt
}
fn worker {
  mov [g512], 7
  ret
}
"""

LOCKED_COUNTER = """
global g512 size 8
global g1024 size 8
fn main {
  spawn worker, r5
  spawn worker, r6
  join r5
  join r6
  halt
}
fn worker {
  lock g1024
  mov r0, [g512]
  add r0, 1
  mov [g512], r0
  unlock g1024
  ret
}
"""

JOIN_ORDERED = """
global g512 size 8
fn main {
  spawn worker, r5
  join r5
  mov r0, [g512]
  halt
}
fn worker {
  mov [g512], 7
  ret
}
"""

OWNED_HEAP = """
global g512 size 8
fn main {
  spawn worker, r5
  spawn worker, r6
  join r5
  join r6
  halt
}
fn worker {
  alloc r2, @buf
  mov r3, 0
  L0: mov [r2], r3
  add r3, 1
  cmp r3, 6
  jne L0
  mov [g512], r3
  ret
}
"""

DERIVED_PAIR = """
global g512 size 16
fn main {
  spawn worker, r5
  spawn worker, r6
  join r5
  join r6
  halt
}
fn worker {
  mov r1, g512
  mov [r1], 3
  mov [r1+8], 5
  ret
}
"""

STACK_ONLY = """
fn main {
  spawn worker, r5
  join r5
  halt
}
fn worker {
  mov [fp-8], 41
  mov r4, [fp-8]
  add r4, 1
  mov [fp-16], r4
  ret
}
"""

# dense owned-heap loop: a naive tracer floods the trace buffer with it,
# a selective tracer skips it entirely
STRESS_LOSS = """
global g512 size 8
global g520 size 8
fn main {
  spawn worker, r5
  spawn worker, r6
  mov [g520], 1
  join r5
  join r6
  halt
}
fn worker {
  alloc r2, @buf
  mov r3, 0
  L0: mov [r2], r3
  mov r4, [r2]
  mov [r2+8], r4
  add r3, 1
  cmp r3, 40
  jne L0
  mov [g512], 7
  mov r0, [g520]
  ret
}
"""

FIXTURES: dict[str, str] = {
    "two_writers": TWO_WRITERS,
    "locked_counter": LOCKED_COUNTER,
    "join_ordered": JOIN_ORDERED,
    "owned_heap": OWNED_HEAP,
    "derived_pair": DERIVED_PAIR,
    "stack_only": STACK_ONLY,
    "stress_loss": STRESS_LOSS,
}


def fixture(name: str) -> Program:
    return parse_program(FIXTURES[name])
