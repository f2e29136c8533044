"""Command line front end for the selective tracing pipeline.

Each subcommand runs one stage and writes its artifacts to files so the
stages compose: analyze -> select -> instrument -> run -> decode ->
detect, with `pipeline` chaining them, `sweep` cross-checking naive vs
selective race results over a generated corpus, and `stats` producing a
CSV plus rendered figures.

Exit codes: 0 clean, 1 races found (or sweep mismatch), 2 stage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import FIXTURES, fixture, generate_corpus
from .decoder import DecodeError, decode, read_events_jsonl
from .detector import detect_hb, detect_lockset
from .instrument import InstrumentError, MappingTable, instrument, instrument_naive
from .ir import ParseError, parse_program
from .report import collect_stats, render_figures, run_pipeline, write_csv
from .selector import select
from .sim import DeadlockError, SimConfig, SimError, loss_stats
from .sim import run as run_sim
from .trace_io import read_sideband, read_streams, write_sideband, write_streams
from .vsa import VsaError, analyze, find_shared_trace_points

STAGE_ERRORS = (ParseError, VsaError, InstrumentError, SimError, DeadlockError, DecodeError, OSError, ValueError, KeyError)


def _load_program(path: str):
    if path.startswith("fixture:"):
        return fixture(path.split(":", 1)[1])
    return parse_program(Path(path).read_text())


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sim_config(args) -> SimConfig:
    return SimConfig(
        seed=args.seed,
        cpus=args.cpus,
        quantum=args.quantum,
        cycles_per_instr=args.cpi,
        buffer_capacity=args.buffer,
        tsc_interval=args.tsc_interval,
    )


def _add_sim_args(sp) -> None:
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cpus", type=int, default=2)
    sp.add_argument("--quantum", type=int, default=8)
    sp.add_argument("--cpi", type=int, default=3, help="cycles per instruction")
    sp.add_argument("--buffer", type=int, default=None, help="PTW budget per drain window")
    sp.add_argument("--tsc-interval", type=int, default=64)


def cmd_analyze(args) -> int:
    p = _load_program(args.program)
    res = analyze(p)
    points = find_shared_trace_points(res, p)
    _write_json(args.out, {"vsa": res.to_json(), "shared_points": [t.to_json() for t in points]})
    print(f"{len(points)} shared trace points -> {args.out}")
    return 0


def cmd_select(args) -> int:
    p = _load_program(args.program)
    sel = select(p, analyze(p))
    _write_json(args.out, sel.to_json())
    c = sel.counts()
    print(
        f"shared={c['t_shared']} race_free={c['t_raceFree']} "
        f"redundant={c['t_redundant']} traced={c['t_trace']} -> {args.out}"
    )
    return 0


def cmd_instrument(args) -> int:
    p = _load_program(args.program)
    res = analyze(p)
    if args.naive:
        inst, table = instrument_naive(p, res)
    else:
        inst, table = instrument(p, select(p, res))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(inst.render())
    Path(args.table).write_text(table.dump() + "\n")
    print(f"{len(table)} trace points -> {args.out}, {args.table}")
    return 0


def cmd_run(args) -> int:
    p = _load_program(args.program)
    arts = run_sim(p, _sim_config(args))
    out = Path(args.out)
    write_streams(out, arts.streams)
    write_sideband(out, arts.sideband)
    _write_json(out / "ground_truth.json", arts.ground_truth)
    _write_json(out / "loss.json", [w.to_json() for w in arts.loss_log])
    _write_json(out / "meta.json", arts.meta)
    ls = loss_stats(arts)
    print(
        f"emitted {arts.emitted_ptw()} PTW, dropped {arts.dropped_ptw()} "
        f"({ls['loss_percent']:.2f}%) -> {out}/"
    )
    return 0


def cmd_decode(args) -> int:
    streams = read_streams(args.trace_dir)
    sideband = read_sideband(args.trace_dir)
    table = MappingTable.from_json(json.loads(Path(args.table).read_text()))
    loss_path = Path(args.trace_dir) / "loss.json"
    loss_log = json.loads(loss_path.read_text()) if loss_path.exists() else []
    meta_path = Path(args.trace_dir) / "meta.json"
    cpi = args.cpi
    if meta_path.exists():
        cpi = json.loads(meta_path.read_text())["config"]["cycles_per_instr"]
    result = decode(streams, sideband, table, cycles_per_instr=cpi, loss_log=loss_log)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(result.to_json_lines() + "\n")
    print(f"{len(result.merged)} events -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    events = read_events_jsonl(Path(args.events).read_text())
    hb = detect_hb(events)
    ls = detect_lockset(events)
    _write_json(args.out, {"hb": hb.to_json(), "lockset": ls.to_json()})
    print(f"{len(hb.races)} hb races, {len(ls.races)} lockset reports -> {args.out}")
    return 1 if hb.races else 0


def cmd_pipeline(args) -> int:
    p = _load_program(args.program)
    cfg = _sim_config(args)
    r = run_pipeline(p, cfg, mode="naive" if args.naive else "selective")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "instrumented.asm").write_text(r.instrumented.render())
    (out / "table.json").write_text(r.table.dump() + "\n")
    write_streams(out, r.run.streams)
    write_sideband(out, r.run.sideband)
    _write_json(out / "ground_truth.json", r.run.ground_truth)
    _write_json(out / "loss.json", [w.to_json() for w in r.run.loss_log])
    _write_json(out / "meta.json", r.run.meta)
    (out / "events.jsonl").write_text(r.decoded.to_json_lines() + "\n")
    _write_json(out / "races.json", {"hb": r.hb.to_json(), "lockset": r.lockset.to_json()})
    if r.selection is not None:
        _write_json(out / "selection.json", r.selection.to_json())
    print(
        f"{r.mode}: {len(r.table)} points, {r.run.emitted_ptw()} PTW, "
        f"{len(r.hb.races)} hb races -> {out}/"
    )
    return 1 if r.hb.races else 0


def cmd_sweep(args) -> int:
    programs = [(name, fixture(name)) for name in sorted(FIXTURES)]
    programs += generate_corpus(args.programs, base_seed=args.base_seed)
    mismatches = []
    rows = []
    for name, p in programs:
        for seed in range(args.seeds):
            cfg = SimConfig(seed=seed, cpus=args.cpus, quantum=args.quantum)
            sel = run_pipeline(p, cfg, "selective")
            nai = run_pipeline(p, cfg, "naive")
            equal = sel.hb.pair_keys() == nai.hb.pair_keys()
            if not equal:
                mismatches.append((name, seed))
            rows.append(
                {
                    "program": name,
                    "seed": seed,
                    "mode": "both",
                    "trace_points": len(sel.table),
                    "ptwrites_executed": sel.run.emitted_ptw(),
                    "ptwrites_dropped": sel.run.dropped_ptw(),
                    "loss_percent": 0.0,
                    "loss_times": 0,
                    "hb_races": len(sel.hb.pair_keys()),
                    "lockset_races": len(sel.lockset.pair_keys()),
                    "seconds": 0.0,
                }
            )
    write_csv(rows, args.out)
    print(f"{len(programs)} programs x {args.seeds} seeds, {len(mismatches)} mismatches -> {args.out}")
    for name, seed in mismatches:
        print(f"  mismatch: {name} seed {seed}", file=sys.stderr)
    return 1 if mismatches else 0


def cmd_stats(args) -> int:
    if args.program:
        programs = [(Path(args.program).stem, _load_program(args.program))]
    else:
        programs = [(name, fixture(name)) for name in sorted(FIXTURES)]
    rows = []
    for name, p in programs:
        for seed in range(args.seeds):
            cfg = SimConfig(
                seed=seed,
                cpus=args.cpus,
                quantum=args.quantum,
                buffer_capacity=args.buffer,
            )
            rows.extend(collect_stats(p, name, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "stats.csv")
    figures = render_figures(rows, out)
    print(f"{len(rows)} rows -> {out / 'stats.csv'}")
    for f in figures:
        print(f"figure -> {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="selrace",
        description="selective hardware-trace data race detection pipeline",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("analyze", help="value-set analysis and shared access discovery")
    sp.add_argument("program", help="program file, or fixture:<name>")
    sp.add_argument("-o", "--out", default="analysis.json")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("select", help="prune must-race-free and redundant trace points")
    sp.add_argument("program")
    sp.add_argument("-o", "--out", default="selection.json")
    sp.set_defaults(fn=cmd_select)

    sp = sub.add_parser("instrument", help="insert trace writes and emit the mapping table")
    sp.add_argument("program")
    sp.add_argument("-o", "--out", default="instrumented.asm")
    sp.add_argument("-t", "--table", default="table.json")
    sp.add_argument("--naive", action="store_true", help="trace every shared access")
    sp.set_defaults(fn=cmd_instrument)

    sp = sub.add_parser("run", help="execute a program on the simulator")
    sp.add_argument("program")
    sp.add_argument("-o", "--out", default="trace")
    _add_sim_args(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("decode", help="reconstruct events from trace streams")
    sp.add_argument("trace_dir")
    sp.add_argument("-t", "--table", default="table.json")
    sp.add_argument("-o", "--out", default="events.jsonl")
    sp.add_argument("--cpi", type=int, default=3)
    sp.set_defaults(fn=cmd_decode)

    sp = sub.add_parser("detect", help="run race detectors over decoded events")
    sp.add_argument("events")
    sp.add_argument("-o", "--out", default="races.json")
    sp.set_defaults(fn=cmd_detect)

    sp = sub.add_parser("pipeline", help="all stages end to end")
    sp.add_argument("program")
    sp.add_argument("-o", "--out", default="pipeline_out")
    sp.add_argument("--naive", action="store_true")
    _add_sim_args(sp)
    sp.set_defaults(fn=cmd_pipeline)

    sp = sub.add_parser("sweep", help="cross-check naive vs selective race results")
    sp.add_argument("--programs", type=int, default=20, help="generated programs")
    sp.add_argument("--seeds", type=int, default=5, help="scheduler seeds per program")
    sp.add_argument("--base-seed", type=int, default=1)
    sp.add_argument("--cpus", type=int, default=2)
    sp.add_argument("--quantum", type=int, default=8)
    sp.add_argument("-o", "--out", default="sweep.csv")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("stats", help="naive vs selective metrics, CSV plus figures")
    sp.add_argument("--program", help="single program file; default: built-in fixtures")
    sp.add_argument("--seeds", type=int, default=3)
    sp.add_argument("--cpus", type=int, default=2)
    sp.add_argument("--quantum", type=int, default=8)
    sp.add_argument("--buffer", type=int, default=None)
    sp.add_argument("-o", "--out", default="stats_out")
    sp.set_defaults(fn=cmd_stats)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except STAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
