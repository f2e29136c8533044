"""Acceptance suite: the eight headline properties of the pipeline.

Each test is one criterion; a terminal-summary hook in conftest prints a
single PASS/FAIL line per criterion at the end of the run.
"""

import json
import random
import time
from pathlib import Path

import pytest

from conftest import (
    access_is_covered,
    hb_closure_oracle,
    pipeline_snapshot,
    random_trace,
)

from selrace.corpus import FIXTURES, fixture, generate_corpus
from selrace.decoder import decode
from selrace.detector import detect_hb
from selrace.instrument import instrument, instrument_naive
from selrace.report import run_pipeline
from selrace.selector import select
from selrace.sim import SimConfig, loss_stats
from selrace.sim import run as run_sim
from selrace.trace_io import Packet
from selrace.vsa import access_points, analyze

GOLDEN = json.loads((Path(__file__).parent / "golden_counts.json").read_text())

N_PROGRAMS = 50
N_SEEDS = 20


@pytest.fixture(scope="module")
def corpus():
    return [(name, fixture(name)) for name in sorted(FIXTURES)] + generate_corpus(
        N_PROGRAMS, base_seed=7
    )


@pytest.fixture(scope="module")
def prepared(corpus):
    """Static stages once per program; the dynamic stages run per seed."""
    out = []
    for name, p in corpus:
        res = analyze(p)
        sel = select(p, res)
        out.append((name, p, res, sel, instrument(p, sel), instrument_naive(p, res)))
    return out


def _races(inst, table, cfg):
    arts = run_sim(inst, cfg)
    decoded = decode(
        arts.streams,
        arts.sideband,
        table,
        cycles_per_instr=cfg.cycles_per_instr,
        loss_log=[w.to_json() for w in arts.loss_log],
    )
    return arts, decoded, detect_hb(decoded.merged).pair_keys()


def test_criterion_1_selective_equals_naive_race_sets(prepared):
    t0 = time.perf_counter()
    checked = 0
    for name, _, _, _, (sp, st), (np_, nt) in prepared:
        for seed in range(N_SEEDS):
            cfg = SimConfig(seed=seed, cpus=2)
            _, _, sel_races = _races(sp, st, cfg)
            _, _, nai_races = _races(np_, nt, cfg)
            assert sel_races == nai_races, (name, seed)
            checked += 1
    elapsed = time.perf_counter() - t0
    assert checked >= 50 * 20
    assert elapsed < 300, f"budget exceeded: {elapsed:.1f}s"


def test_criterion_2_pruning_strict_with_golden_counts():
    for name, want in GOLDEN.items():
        p = fixture(name)
        sel = select(p, analyze(p))
        all_points = sum(len(access_points(i)) for i in p.instructions()) + sum(
            1 for i in p.instructions() if i.kind in ("lock", "unlock", "spawn", "join")
        )
        got = {
            "all_points": all_points,
            "t_shared": len(sel.t_shared),
            "t_race_free": len(sel.t_race_free),
            "t_redundant": len(sel.t_redundant),
            "t_trace": len(sel.t_trace),
        }
        assert got == want, name
    # strict pruning on the designed-for patterns, against the count of
    # every access point a baseline tracer would instrument
    for name in ("locked_counter", "owned_heap", "stack_only", "derived_pair"):
        assert GOLDEN[name]["t_trace"] < GOLDEN[name]["all_points"], name
    # the fully-unguarded fixture keeps everything
    p = fixture("two_writers")
    sel = select(p, analyze(p))
    assert {t.key() for t in sel.t_trace} == {t.key() for t in sel.t_shared}
    assert GOLDEN["two_writers"]["t_trace"] == GOLDEN["two_writers"]["all_points"]


def test_criterion_3_vsa_soundness(prepared):
    checked = violations = 0
    for name, p, res, _, _, _ in prepared:
        for seed in range(3):
            arts = run_sim(p, SimConfig(seed=seed, cpus=2))
            allocs = [
                (g["addr"], p.instr(g["iid"]).site)
                for g in arts.ground_truth
                if g["kind"] == "alloc"
            ]
            for g in arts.ground_truth:
                if g["kind"] in ("read", "write") and g["base_reg"] is not None:
                    checked += 1
                    if not access_is_covered(p, res, allocs, g):
                        violations += 1
    assert checked > 0
    assert violations == 0, f"{violations}/{checked} accesses outside abstraction"


def test_criterion_4_decoder_round_trip(prepared):
    # the documented two-packet pattern: base plus cumulative elapsed
    from selrace.decoder import reconstruct_timestamps

    stamped = reconstruct_timestamps(
        [
            Packet("TSC", 1000),
            Packet("CYC", 10),
            Packet("CYC", 5),
            Packet("PTW", 1, 0),
            Packet("CYC", 20),
            Packet("PTW", 2, 1),
        ]
    )
    assert [ts for _, ts in stamped] == [1015, 1035]

    for name, _, _, _, (sp, st), (np_, nt) in prepared:
        for inst, table in ((sp, st), (np_, nt)):
            for seed in range(2):
                cfg = SimConfig(seed=seed, cpus=2)  # unlimited buffers
                arts, decoded, _ = _races(inst, table, cfg)
                origins = {e.origin for e in table.entries.values()}
                truth = sorted(
                    (g["ts"], g["tid"], g["iid"], g["kind"], g["addr"])
                    for g in arts.ground_truth
                    if g["iid"] in origins and g["kind"] != "ptw"
                )
                got = sorted(
                    (e.timestamp, e.tid, e.origin, e.kind, e.address)
                    for e in decoded.merged
                    if not e.derived and e.kind != "gap"
                )
                assert got == truth, (name, seed)


def test_criterion_5_derived_reconstruction(prepared):
    from collections import Counter

    total = 0
    for name, _, _, sel, (sp, st), _ in prepared:
        if not sel.relations:
            continue
        for seed in range(N_SEEDS):
            arts, decoded, _ = _races(sp, st, SimConfig(seed=seed, cpus=2))
            derived = [e for e in decoded.merged if e.derived]
            origins = {r.derived.iid for r in sel.relations}
            got = Counter((e.origin, e.tid, e.address) for e in derived)
            want = Counter(
                (g["iid"], g["tid"], g["addr"])
                for g in arts.ground_truth
                if g["iid"] in origins and g["kind"] in ("read", "write")
            )
            assert got == want, (name, seed)
            total += len(derived)
    assert total > 0, "corpus must exercise derived reconstruction"


def test_criterion_6_hb_oracle_equivalence():
    rng = random.Random(20240817)
    for i in range(1000):
        events = random_trace(rng, max_events=12)
        got = detect_hb(events).pair_keys()
        want = hb_closure_oracle(events)
        assert got == want, f"trace {i}: {got} != {want}"


def test_criterion_7_loss_mirror():
    p = fixture("stress_loss")
    for seed in range(10):
        cfg = SimConfig(seed=seed, cpus=2, buffer_capacity=4, tsc_interval=64)
        naive = run_pipeline(p, cfg, "naive")
        selective = run_pipeline(p, cfg, "selective")
        assert loss_stats(naive.run)["loss_percent"] > 0, seed
        assert loss_stats(selective.run)["loss_percent"] == 0, seed


def test_criterion_8_bit_identical_determinism(corpus):
    pairs = [(corpus[i % len(corpus)], i) for i in range(10)]
    for (name, p), seed in pairs:
        snaps = {
            pipeline_snapshot(run_pipeline(p, SimConfig(seed=seed, cpus=2), "selective"))
            for _ in range(3)
        }
        assert len(snaps) == 1, (name, seed)
