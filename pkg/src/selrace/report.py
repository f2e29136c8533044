"""End-to-end pipeline orchestration, metrics, and figure rendering.

`run_pipeline` chains analysis, selection, instrumentation, simulation,
decoding and detection for one program. `collect_stats` compares the
naive (trace everything shared) and selective builds on the same seed
and reports instrumentation counts, trace volume, loss, and races.
Figures are rendered headless to PNG next to the CSV.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

from . import sim as simulator
from .decoder import DecodeResult, decode
from .detector import RaceReport, detect_hb, detect_lockset
from .instrument import MappingTable, instrument, instrument_naive
from .ir import Program
from .selector import SelectionReport, select
from .sim import RunArtifacts, SimConfig, loss_stats
from .vsa import VsaResult, analyze


@dataclass
class PipelineResult:
    mode: str
    vsa: VsaResult
    selection: SelectionReport | None
    instrumented: Program
    table: MappingTable
    run: RunArtifacts
    decoded: DecodeResult
    hb: RaceReport
    lockset: RaceReport


def run_pipeline(p: Program, cfg: SimConfig, mode: str = "selective") -> PipelineResult:
    """Full chain for one program and one simulator configuration."""
    res = analyze(p)
    selection = None
    if mode == "selective":
        selection = select(p, res)
        inst, table = instrument(p, selection)
    elif mode == "naive":
        inst, table = instrument_naive(p, res)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    run = simulator.run(inst, cfg)
    decoded = decode(
        run.streams,
        run.sideband,
        table,
        cycles_per_instr=cfg.cycles_per_instr,
        loss_log=[w.to_json() for w in run.loss_log],
    )
    hb = detect_hb(decoded.merged)
    lockset = detect_lockset(decoded.merged)
    return PipelineResult(mode, res, selection, inst, table, run, decoded, hb, lockset)


STAT_COLUMNS = [
    "program",
    "seed",
    "mode",
    "trace_points",
    "ptwrites_executed",
    "ptwrites_dropped",
    "loss_percent",
    "loss_times",
    "hb_races",
    "lockset_races",
    "seconds",
]


def collect_stats(p: Program, name: str, cfg: SimConfig) -> list[dict]:
    rows = []
    for mode in ("naive", "selective"):
        t0 = time.perf_counter()
        r = run_pipeline(p, cfg, mode)
        dt = time.perf_counter() - t0
        ls = loss_stats(r.run)
        rows.append(
            {
                "program": name,
                "seed": cfg.seed,
                "mode": mode,
                "trace_points": len(r.table),
                "ptwrites_executed": r.run.emitted_ptw(),
                "ptwrites_dropped": r.run.dropped_ptw(),
                "loss_percent": round(ls["loss_percent"], 3),
                "loss_times": ls["loss_times"],
                "hb_races": len(r.hb.pair_keys()),
                "lockset_races": len(r.lockset.pair_keys()),
                "seconds": round(dt, 4),
            }
        )
    return rows


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=STAT_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def render_figures(rows: list[dict], out_dir) -> list[str]:
    """Bar charts comparing naive vs selective trace volume and loss."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    programs = sorted({r["program"] for r in rows})

    def series(mode, col):
        vals = []
        for prog in programs:
            rs = [r[col] for r in rows if r["program"] == prog and r["mode"] == mode]
            vals.append(sum(rs) / len(rs) if rs else 0)
        return vals

    written = []
    for col, title, fname in [
        ("ptwrites_executed", "Executed trace writes per program", "trace_volume.png"),
        ("loss_percent", "Packet loss percent per program", "loss.png"),
    ]:
        fig, ax = plt.subplots(figsize=(max(6, len(programs) * 0.5), 4))
        x = range(len(programs))
        ax.bar([i - 0.2 for i in x], series("naive", col), width=0.4, label="naive")
        ax.bar([i + 0.2 for i in x], series("selective", col), width=0.4, label="selective")
        ax.set_xticks(list(x))
        ax.set_xticklabels(programs, rotation=90, fontsize=6)
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        path = out / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written
