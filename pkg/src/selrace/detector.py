"""Dynamic data race detection over decoded event streams.

Two independent detectors:
  * detect_hb: exact happens-before detection. Vector clocks are driven
    by lock, fork and join events; every access keeps its owner epoch so
    all unordered conflicting pairs can be enumerated, not just the
    first one per address.
  * detect_lockset: Eraser-style lockset discipline checking, reported
    separately since it flags violations rather than proven races.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .decoder import MemoryEvent


@dataclass(frozen=True)
class RaceAccess:
    tid: int
    origin: str
    kind: str
    timestamp: int

    def to_json(self):
        return {
            "tid": self.tid,
            "origin": self.origin,
            "kind": self.kind,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class Race:
    address: int
    first: RaceAccess
    second: RaceAccess
    detector: str  # "hb" | "lockset"

    def pair_key(self):
        """Identity of the racy source pair, stable across interleavings."""
        return (self.address, tuple(sorted((self.first.origin, self.second.origin))))

    def to_json(self):
        return {
            "address": self.address,
            "first": self.first.to_json(),
            "second": self.second.to_json(),
            "detector": self.detector,
        }


@dataclass
class RaceReport:
    races: list[Race] = field(default_factory=list)

    def pair_keys(self) -> set:
        return {r.pair_key() for r in self.races}

    def to_json(self):
        return {"races": [r.to_json() for r in self.races]}

    def dump(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


class _VC:
    __slots__ = ("c",)

    def __init__(self):
        self.c: dict[int, int] = {}

    def get(self, tid):
        return self.c.get(tid, 0)

    def join(self, other: "_VC"):
        for tid, v in other.c.items():
            if v > self.c.get(tid, 0):
                self.c[tid] = v

    def copy(self):
        vc = _VC()
        vc.c = dict(self.c)
        return vc


@dataclass
class _Access:
    kind: str
    tid: int
    epoch: int  # owner's clock component at access time
    origin: str
    timestamp: int


def detect_hb(events: list[MemoryEvent]) -> RaceReport:
    """Enumerate all pairs of unordered conflicting accesses.

    An access a happens before access b iff a's owner epoch is covered by
    b's vector clock entry for a's thread, so keeping one scalar epoch per
    historical access suffices for an exact check.
    """
    clocks: dict[int, _VC] = {}
    locks: dict[int, _VC] = {}
    history: dict[int, list[_Access]] = {}
    races: list[Race] = []
    seen_pairs: set = set()

    def clock_of(tid) -> _VC:
        vc = clocks.get(tid)
        if vc is None:
            vc = _VC()
            vc.c[tid] = 1
            clocks[tid] = vc
        return vc

    for ev in events:
        vc = clock_of(ev.tid)
        if ev.kind == "lock_acq":
            held = locks.get(ev.address)
            if held is not None:
                vc.join(held)
        elif ev.kind == "lock_rel":
            locks[ev.address] = vc.copy()
            vc.c[ev.tid] = vc.get(ev.tid) + 1
        elif ev.kind == "fork":
            child = clock_of(ev.address)
            child.join(vc)
            vc.c[ev.tid] = vc.get(ev.tid) + 1
        elif ev.kind == "join":
            # the joined thread has already finished, so its clock is final
            other = clocks.get(ev.address)
            if other is not None:
                vc.join(other)
        elif ev.kind == "gap":
            # events may have been lost here; start a fresh epoch so the
            # surviving accesses cannot vouch for the missing ones
            vc.c[ev.tid] = vc.get(ev.tid) + 1
        elif ev.kind in ("read", "write"):
            cur = _Access(ev.kind, ev.tid, vc.get(ev.tid), ev.origin, ev.timestamp)
            hist = history.setdefault(ev.address, [])
            for past in hist:
                if past.tid == ev.tid:
                    continue
                if past.kind == "read" and ev.kind == "read":
                    continue
                if past.epoch <= vc.get(past.tid):
                    continue  # ordered by happens-before
                key = (ev.address, tuple(sorted((past.origin, ev.origin))))
                if key in seen_pairs:
                    continue
                seen_pairs.add(key)
                races.append(
                    Race(
                        address=ev.address,
                        first=RaceAccess(past.tid, past.origin, past.kind, past.timestamp),
                        second=RaceAccess(ev.tid, ev.origin, ev.kind, ev.timestamp),
                        detector="hb",
                    )
                )
            hist.append(cur)
        # reads/writes and other events do not advance the clock

    races.sort(key=lambda r: (r.address, r.first.timestamp, r.second.timestamp, r.first.origin))
    return RaceReport(races=races)


# Eraser candidate-set states
_VIRGIN, _EXCLUSIVE, _SHARED, _SHARED_MOD = range(4)


def detect_lockset(events: list[MemoryEvent]) -> RaceReport:
    """Lockset discipline checking: every shared location should be
    consistently protected by at least one common lock."""
    held: dict[int, frozenset[int]] = {}
    state: dict[int, int] = {}
    owner: dict[int, int] = {}
    candidates: dict[int, frozenset[int]] = {}
    witness: dict[int, RaceAccess] = {}
    races: list[Race] = []
    reported: set = set()

    for ev in events:
        if ev.kind == "lock_acq":
            held[ev.tid] = held.get(ev.tid, frozenset()) | {ev.address}
            continue
        if ev.kind == "lock_rel":
            held[ev.tid] = held.get(ev.tid, frozenset()) - {ev.address}
            continue
        if ev.kind not in ("read", "write"):
            continue

        a = ev.address
        locks_now = held.get(ev.tid, frozenset())
        st = state.get(a, _VIRGIN)
        if st == _VIRGIN:
            state[a] = _EXCLUSIVE
            owner[a] = ev.tid
            candidates[a] = locks_now
            witness[a] = RaceAccess(ev.tid, ev.origin, ev.kind, ev.timestamp)
            continue
        if st == _EXCLUSIVE and ev.tid == owner[a]:
            candidates[a] = locks_now
            witness[a] = RaceAccess(ev.tid, ev.origin, ev.kind, ev.timestamp)
            continue
        if st == _EXCLUSIVE:
            st = _SHARED_MOD if ev.kind == "write" else _SHARED
            state[a] = st
        elif st == _SHARED and ev.kind == "write":
            st = _SHARED_MOD
            state[a] = st
        candidates[a] = candidates[a] & locks_now
        if st == _SHARED_MOD and not candidates[a]:
            cur = RaceAccess(ev.tid, ev.origin, ev.kind, ev.timestamp)
            prev = witness[a]
            key = (a, tuple(sorted((prev.origin, cur.origin))))
            if key not in reported:
                reported.add(key)
                races.append(Race(a, prev, cur, "lockset"))
        witness[a] = RaceAccess(ev.tid, ev.origin, ev.kind, ev.timestamp)

    races.sort(key=lambda r: (r.address, r.first.timestamp, r.second.timestamp, r.first.origin))
    return RaceReport(races=races)
