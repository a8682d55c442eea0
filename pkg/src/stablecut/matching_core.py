"""Instances, matchings, stability, deferred acceptance and lattice operations.

A many-to-one market has students on one side and schools (with quotas) on the
other. Every agent ranks all agents of the other side plus the outside option
OUTSIDE; partners ranked after OUTSIDE are unacceptable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping

import numpy as np

OUTSIDE = "@"

Agent = Hashable


class InstanceError(ValueError):
    """Structural problem with an instance or a matching."""


class UnstableError(ValueError):
    """A stable matching was required but the argument is not stable."""


class LimitExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Instance:
    students: tuple
    schools: tuple
    quota: Mapping
    student_pref: Mapping
    school_pref: Mapping

    def __post_init__(self):
        object.__setattr__(self, "students", tuple(self.students))
        object.__setattr__(self, "schools", tuple(self.schools))
        object.__setattr__(self, "quota", dict(self.quota))
        object.__setattr__(self, "student_pref", {a: tuple(p) for a, p in self.student_pref.items()})
        object.__setattr__(self, "school_pref", {b: tuple(p) for b, p in self.school_pref.items()})
        self._validate()

    def _validate(self):
        if len(set(self.students)) != len(self.students):
            raise InstanceError("duplicate student id")
        if len(set(self.schools)) != len(self.schools):
            raise InstanceError("duplicate school id")
        if OUTSIDE in self.students or OUTSIDE in self.schools:
            raise InstanceError(f"{OUTSIDE!r} is reserved for the outside option")
        sset, bset = set(self.students), set(self.schools)
        if set(self.student_pref) != sset:
            raise InstanceError("student preference lists do not match the student set")
        if set(self.school_pref) != bset:
            raise InstanceError("school preference lists do not match the school set")
        for a, p in self.student_pref.items():
            if len(p) != len(bset) + 1 or set(p) != bset | {OUTSIDE}:
                raise InstanceError(f"preference of {a!r} must list every school and {OUTSIDE} once")
        for b, p in self.school_pref.items():
            if len(p) != len(sset) + 1 or set(p) != sset | {OUTSIDE}:
                raise InstanceError(f"preference of {b!r} must list every student and {OUTSIDE} once")
        cap = max(1, len(self.students))
        for b in self.schools:
            q = self.quota.get(b)
            if not isinstance(q, int) or q < 1 or q > cap:
                raise InstanceError(f"quota of {b!r} must be an integer in 1..{cap}")

    @classmethod
    def from_lists(cls, students, schools, quota, student_lists, school_lists):
        """Build from possibly partial lists.

        A list may contain OUTSIDE; agents it omits are appended after OUTSIDE
        in the other side's input order. A list without OUTSIDE gets OUTSIDE
        appended right after its last entry.
        """
        students, schools = list(students), list(schools)

        def complete(lst, others):
            lst = list(lst)
            if OUTSIDE not in lst:
                lst.append(OUTSIDE)
            seen = set(lst)
            return lst + [x for x in others if x not in seen]

        sp = {a: complete(student_lists.get(a, []), schools) for a in students}
        bp = {b: complete(school_lists.get(b, []), students) for b in schools}
        if isinstance(quota, int):
            quota = {b: quota for b in schools}
        return cls(students, schools, quota, sp, bp)

    # ranks are 0-based internally; RankTable in the public sense is rank + 1
    @cached_property
    def srank(self) -> dict:
        return {a: {x: i for i, x in enumerate(p)} for a, p in self.student_pref.items()}

    @cached_property
    def brank(self) -> dict:
        return {b: {x: i for i, x in enumerate(p)} for b, p in self.school_pref.items()}

    def rank(self, a, b) -> int:
        """1-based rank of b (school or OUTSIDE) in student a's list."""
        return self.srank[a][b] + 1

    def acceptable(self, a, b) -> bool:
        """True iff a and b rank each other above OUTSIDE."""
        return self.srank[a][b] < self.srank[a][OUTSIDE] and self.brank[b][a] < self.brank[b][OUTSIDE]

    @cached_property
    def unit_clone(self):
        return clone_to_unit_capacity(self)

    def __repr__(self):
        return f"Instance({len(self.students)} students, {len(self.schools)} schools)"


class Matching:
    """Student -> school-or-OUTSIDE map. Rosters are derived on demand."""

    __slots__ = ("_assign", "_key", "_rosters")

    def __init__(self, assign: Mapping):
        self._assign = dict(assign)
        self._key = frozenset(self._assign.items())
        self._rosters = None

    def __getitem__(self, a):
        return self._assign[a]

    def get(self, a, default=OUTSIDE):
        return self._assign.get(a, default)

    def __contains__(self, a):
        return a in self._assign

    def __iter__(self):
        return iter(self._assign)

    def __len__(self):
        return len(self._assign)

    def items(self):
        return self._assign.items()

    def as_dict(self) -> dict:
        return dict(self._assign)

    def pairs(self) -> frozenset:
        """Matched (student, school) pairs, OUTSIDE excluded."""
        return frozenset((a, b) for a, b in self._assign.items() if b != OUTSIDE)

    def roster(self, b) -> frozenset:
        if self._rosters is None:
            r = {}
            for a, x in self._assign.items():
                if x != OUTSIDE:
                    r.setdefault(x, set()).add(a)
            self._rosters = {x: frozenset(s) for x, s in r.items()}
        return self._rosters.get(b, frozenset())

    def __eq__(self, other):
        return isinstance(other, Matching) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        body = ", ".join(f"{a}{b}" for a, b in sorted(self.pairs(), key=repr))
        return "{" + body + "}"


def check_structure(inst: Instance, m: Matching) -> None:
    if set(m) != set(inst.students):
        raise InstanceError("matching must assign every student (possibly to OUTSIDE)")
    schools = set(inst.schools)
    for a, b in m.items():
        if b != OUTSIDE and b not in schools:
            raise InstanceError(f"unknown school {b!r} for {a!r}")
    for b in inst.schools:
        if len(m.roster(b)) > inst.quota[b]:
            raise InstanceError(f"quota of {b!r} exceeded")


@dataclass(frozen=True)
class Witness:
    kind: str  # "pair" or "agent"
    agents: tuple

    def __str__(self):
        return f"blocking {self.kind} {' '.join(map(str, self.agents))}"


def is_stable(inst: Instance, m: Matching) -> tuple[bool, Witness | None]:
    """Stability test; returns (True, None) or (False, witness)."""
    check_structure(inst, m)
    sr, br = inst.srank, inst.brank
    for a, b in m.items():
        if b == OUTSIDE:
            continue
        if sr[a][b] > sr[a][OUTSIDE]:
            return False, Witness("agent", (a,))
        if br[b][a] > br[b][OUTSIDE]:
            return False, Witness("agent", (b,))
    worst = {}
    for b in inst.schools:
        r = m.roster(b)
        worst[b] = max((br[b][x] for x in r), default=-1)
    for a in inst.students:
        cur = sr[a][m[a]]
        for b in inst.student_pref[a]:
            if sr[a][b] >= cur or b == OUTSIDE:
                break
            rb = br[b]
            if rb[a] > rb[OUTSIDE]:
                continue
            if len(m.roster(b)) < inst.quota[b] or rb[a] < worst[b]:
                return False, Witness("pair", (a, b))
    return True, None


def require_stable(inst: Instance, m: Matching) -> None:
    ok, w = is_stable(inst, m)
    if not ok:
        raise UnstableError(f"matching is not stable: {w}")


def deferred_acceptance(inst: Instance, proposing: str = "students") -> Matching:
    """Student-proposing gives M0 (student-optimal); school-proposing gives Mz."""
    if proposing == "students":
        return _da_students(inst)
    if proposing == "schools":
        return _da_schools(inst)
    raise ValueError("proposing must be 'students' or 'schools'")


def _da_students(inst: Instance) -> Matching:
    br = inst.brank
    nxt = {a: 0 for a in inst.students}
    held = {b: [] for b in inst.schools}
    free = list(inst.students)
    while free:
        # one round: every free student proposes in id order
        proposals = {}
        for a in free:
            pref = inst.student_pref[a]
            while True:
                b = pref[nxt[a]]
                if b == OUTSIDE:
                    break
                nxt[a] += 1
                if br[b][a] < br[b][OUTSIDE]:
                    proposals.setdefault(b, []).append(a)
                    break
        free = []
        for b, new in proposals.items():
            pool = sorted(held[b] + new, key=br[b].__getitem__)
            q = inst.quota[b]
            held[b], rejected = pool[:q], pool[q:]
            free.extend(rejected)
        order = {a: i for i, a in enumerate(inst.students)}
        free.sort(key=order.__getitem__)
        free = [a for a in free if inst.student_pref[a][nxt[a]] != OUTSIDE]
    assign = {a: OUTSIDE for a in inst.students}
    for b, r in held.items():
        for a in r:
            assign[a] = b
    return Matching(assign)


def _da_schools(inst: Instance) -> Matching:
    sr = inst.srank
    nxt = {b: 0 for b in inst.schools}
    holds = {}  # student -> school
    count = {b: 0 for b in inst.schools}
    active = list(inst.schools)
    while active:
        proposals = {}
        for b in active:
            pref = inst.school_pref[b]
            need = inst.quota[b] - count[b]
            while need > 0:
                a = pref[nxt[b]]
                if a == OUTSIDE:
                    break
                nxt[b] += 1
                if sr[a][b] < sr[a][OUTSIDE]:
                    proposals.setdefault(a, []).append(b)
                    need -= 1
        for a, offers in proposals.items():
            cur = holds.get(a)
            cands = offers + ([cur] if cur is not None else [])
            best = min(cands, key=sr[a].__getitem__)
            for b in offers:
                count[b] += 1
            for b in cands:
                if b != best:
                    count[b] -= 1
            holds[a] = best
        active = [
            b
            for b in inst.schools
            if count[b] < inst.quota[b] and inst.school_pref[b][nxt[b]] != OUTSIDE
        ]
    assign = {a: holds.get(a, OUTSIDE) for a in inst.students}
    return Matching(assign)


def compare(inst: Instance, m1: Matching, m2: Matching) -> str:
    """Student-wise dominance: one of '=', '>', '<', 'incomparable'."""
    sr = inst.srank
    better = worse = False
    for a in inst.students:
        r1, r2 = sr[a][m1[a]], sr[a][m2[a]]
        if r1 < r2:
            better = True
        elif r1 > r2:
            worse = True
    if better and worse:
        return "incomparable"
    if better:
        return ">"
    if worse:
        return "<"
    return "="


def dominates(inst: Instance, m1: Matching, m2: Matching) -> bool:
    return compare(inst, m1, m2) in ("=", ">")


def lattice_op(inst: Instance, kind: str, m1: Matching, m2: Matching) -> Matching:
    """Join gives each student the better partner, meet the worse one."""
    require_stable(inst, m1)
    require_stable(inst, m2)
    sr = inst.srank
    pick = min if kind == "join" else max if kind == "meet" else None
    if pick is None:
        raise ValueError("kind must be 'meet' or 'join'")
    return Matching({a: pick(m1[a], m2[a], key=sr[a].__getitem__) for a in inst.students})


def enumerate_stable_bruteforce(inst: Instance, limit: int = 10_000, chunk: int = 1 << 18) -> list:
    """All stable matchings by exhaustive assignment enumeration.

    Each student is tried with every mutually acceptable school and OUTSIDE;
    feasibility and blocking conditions are checked in vectorised chunks.
    The result is sorted so that dominating matchings come first.
    """
    A, B = list(inst.students), list(inst.schools)
    nA, nB = len(A), len(B)
    bidx = {b: j for j, b in enumerate(B)}
    # option code nB means OUTSIDE
    options = [[bidx[b] for b in B if inst.acceptable(a, b)] + [nB] for a in A]
    srank = np.full((nA, nB + 1), 0, dtype=np.int64)
    brank = np.full((nB, nA), 0, dtype=np.int64)
    bout = np.zeros(nB, dtype=np.int64)
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            srank[i, j] = inst.srank[a][b]
        srank[i, nB] = inst.srank[a][OUTSIDE]
    for j, b in enumerate(B):
        for i, a in enumerate(A):
            brank[j, i] = inst.brank[b][a]
        bout[j] = inst.brank[b][OUTSIDE]
    quota = np.array([inst.quota[b] for b in B], dtype=np.int64)
    radix = [len(o) for o in options]
    total = int(np.prod(radix, dtype=object)) if radix else 1
    opt_arr = [np.array(o, dtype=np.int64) for o in options]

    found = []
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        C = np.empty((len(idx), nA), dtype=np.int64)
        rem = idx.copy()
        for i in range(nA - 1, -1, -1):
            C[:, i] = opt_arr[i][rem % radix[i]]
            rem //= radix[i]
        ok = np.ones(len(idx), dtype=bool)
        counts = np.zeros((len(idx), nB), dtype=np.int64)
        worst = np.full((len(idx), nB), -1, dtype=np.int64)
        for j in range(nB):
            mask = C == j
            counts[:, j] = mask.sum(axis=1)
            worst[:, j] = np.where(mask, brank[j][None, :], -1).max(axis=1) if nA else -1
            ok &= counts[:, j] <= quota[j]
        cur = srank[np.arange(nA)[None, :], C] if nA else np.zeros((len(idx), 0), dtype=np.int64)
        for i in range(nA):
            for j in range(nB):
                if brank[j, i] > bout[j] or srank[i, j] > srank[i, nB]:
                    continue
                prefers = srank[i, j] < cur[:, i]
                room = (counts[:, j] < quota[j]) | (brank[j, i] < worst[:, j])
                ok &= ~(prefers & room)
        for row in C[ok]:
            found.append(Matching({a: (B[row[i]] if row[i] < nB else OUTSIDE) for i, a in enumerate(A)}))
            if len(found) > limit:
                raise LimitExceeded(f"more than {limit} stable matchings")
    found.sort(key=lambda m: (sum(inst.srank[a][m[a]] for a in A), repr(m)))
    return found


@dataclass(frozen=True)
class CloneMap:
    """Correspondence between an instance and its unit-quota clone."""

    original: Instance
    clone: Instance
    copy_of: dict = field(repr=False)  # clone school -> original school
    copies: dict = field(repr=False)  # original school -> list of clone schools

    def to_original(self, m: Matching) -> Matching:
        return Matching({a: (b if b == OUTSIDE else self.copy_of[b]) for a, b in m.items()})

    def from_original(self, m: Matching) -> Matching:
        """Canonical clone matching: b's copies are filled in b's preference order."""
        assign = {}
        br = self.original.brank
        for a, b in m.items():
            if b == OUTSIDE:
                assign[a] = OUTSIDE
        for b, cps in self.copies.items():
            r = sorted(m.roster(b), key=br[b].__getitem__)
            for a, c in zip(r, cps):
                assign[a] = c
        return Matching(assign)


def clone_to_unit_capacity(inst: Instance) -> CloneMap:
    """Split each school b into quota(b) unit-quota copies."""
    if all(q == 1 for q in inst.quota.values()):
        ident = {b: b for b in inst.schools}
        return CloneMap(inst, inst, ident, {b: [b] for b in inst.schools})
    copy_of, copies, schools = {}, {}, []
    for b in inst.schools:
        q = inst.quota[b]
        cps = [b] if q == 1 else [f"{b}#{i}" for i in range(1, q + 1)]
        copies[b] = cps
        for c in cps:
            copy_of[c] = b
            schools.append(c)
    sp = {a: [c for x in p for c in (copies[x] if x != OUTSIDE else [OUTSIDE])] for a, p in inst.student_pref.items()}
    bp = {c: inst.school_pref[copy_of[c]] for c in schools}
    clone = Instance(inst.students, schools, {c: 1 for c in schools}, sp, bp)
    return CloneMap(inst, clone, copy_of, copies)


def unmatched_students(m: Matching) -> frozenset:
    return frozenset(a for a, b in m.items() if b == OUTSIDE)


def restrict(inst: Instance, students: Iterable, schools: Iterable, quota: Mapping | None = None) -> Instance:
    """Sub-market on the given agents; orders are restrictions of inst's orders."""
    keep_a = [a for a in inst.students if a in set(students)]
    keep_b = [b for b in inst.schools if b in set(schools)]
    ka, kb = set(keep_a), set(keep_b)
    sp = {a: [x for x in inst.student_pref[a] if x == OUTSIDE or x in kb] for a in keep_a}
    bp = {b: [x for x in inst.school_pref[b] if x == OUTSIDE or x in ka] for b in keep_b}
    q = {}
    for b in keep_b:
        v = (quota or {}).get(b, inst.quota[b])
        q[b] = max(1, min(v, len(keep_a)))
    return Instance(keep_a, keep_b, q, sp, bp)


def all_assignments(inst: Instance) -> Iterable[Matching]:
    """Every quota-feasible assignment (small instances only; used by tests)."""
    A = list(inst.students)
    opts = [list(inst.schools) + [OUTSIDE] for _ in A]
    for combo in itertools.product(*opts):
        m = Matching(dict(zip(A, combo)))
        if all(len(m.roster(b)) <= inst.quota[b] for b in inst.schools):
            yield m
