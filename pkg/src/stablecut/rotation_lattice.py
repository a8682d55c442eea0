"""Rotations, the rotation poset and the upset <-> stable matching bijection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from .matching_core import (
    OUTSIDE,
    Instance,
    LimitExceeded,
    Matching,
    deferred_acceptance,
    require_stable,
)


class NotExposed(ValueError):
    pass


class NotUpset(ValueError):
    pass


@dataclass(frozen=True)
class Rotation:
    id: int
    plus: frozenset
    minus: frozenset

    @property
    def students(self) -> frozenset:
        return frozenset(a for a, _ in self.plus)

    @property
    def schools(self) -> frozenset:
        return frozenset(b for _, b in self.plus) | frozenset(b for _, b in self.minus)

    @property
    def key(self) -> tuple:
        return (self.plus, self.minus)

    def moves(self) -> dict:
        """student -> (plus partner, minus partner)"""
        src = dict(self.plus)
        return {a: (src[a], b) for a, b in self.minus}

    def __repr__(self):
        p = ",".join(f"{a}{b}" for a, b in sorted(self.plus, key=repr))
        q = ",".join(f"{a}{b}" for a, b in sorted(self.minus, key=repr))
        return f"rho{self.id}(({p}),({q}))"


def _apply(m: Matching, plus: Iterable, minus: Iterable) -> Matching:
    d = m.as_dict()
    for a, b in minus:
        d[a] = b
    return Matching(d)


def _exposed_raw(inst: Instance, m: Matching, mz: Matching) -> list:
    """Exposed rotations of a stable m as (plus, minus) pairs on inst."""
    cm = inst.unit_clone
    cl = cm.clone
    cmm = cm.from_original(m)
    cmz = cm.from_original(mz)
    holder = {b: a for a, b in cmm.items() if b != OUTSIDE}
    sr, br = cl.srank, cl.brank
    succ = {}
    for a in cl.students:
        cur = cmm[a]
        if cur == cmz[a]:
            continue
        pref = cl.student_pref[a]
        for c in pref[sr[a][cur] + 1:]:
            if c == OUTSIDE:
                break
            h = holder.get(c)
            if h is not None and br[c][a] < br[c][h]:
                succ[a] = c
                break
        else:
            raise RuntimeError("no successor school; matching is not stable")
    nxt = {a: holder[c] for a, c in succ.items()}
    out, done = [], set()
    order = {a: i for i, a in enumerate(cl.students)}
    for start in sorted(nxt, key=order.__getitem__):
        if start in done:
            continue
        path, pos = [], {}
        x = start
        while x not in done and x not in pos:
            pos[x] = len(path)
            path.append(x)
            x = nxt[x]
        if x not in done and x in pos:
            cyc = path[pos[x]:]
            plus = {(a, cm.copy_of[cmm[a]]) for a in cyc}
            minus = {(a, cm.copy_of[succ[a]]) for a in cyc}
            common = plus & minus
            out.append((frozenset(plus - common), frozenset(minus - common)))
        done.update(path)
    return out


def exposed_rotations(inst: Instance, m: Matching, mz: Matching | None = None) -> list:
    """Rotations exposed in m (ids are -1; use a RotationOrder for stable ids)."""
    require_stable(inst, m)
    if mz is None:
        mz = deferred_acceptance(inst, "schools")
    return [Rotation(-1, p, q) for p, q in _exposed_raw(inst, m, mz)]


def eliminate(inst: Instance, m: Matching, rho: Rotation, check: bool = True) -> Matching:
    if check:
        keys = {r.key for r in exposed_rotations(inst, m)}
        if rho.key not in keys:
            raise NotExposed(f"{rho!r} is not exposed")
    return _apply(m, rho.plus, rho.minus)


@dataclass(eq=False)
class RotationOrder:
    """Rotation set with the full relation and its Hasse reduction.

    above[i] holds every j with rho_j ⊵ rho_i (j must be eliminated first),
    including i itself. Ids are a linear extension of the order.
    """

    m0: Matching
    mz: Matching
    rotations: list
    above: dict
    rank: Callable = field(repr=False)
    inst: Instance | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.rotations)
        self.below = {i: set() for i in range(n)}
        for i, ups in self.above.items():
            for j in ups:
                self.below[j].add(i)
        self.below = {i: frozenset(s) for i, s in self.below.items()}
        self.hasse = []
        for i in range(n):
            strict = self.above[i] - {i}
            for j in strict:
                if not any(j in self.above[k] for k in strict if k != j):
                    self.hasse.append((j, i))
        self.hasse.sort()
        self.parents = {i: frozenset(j for j, k in self.hasse if k == i) for i in range(n)}
        # one witness student per rotation for the monotonicity test
        self._probe = []
        for r in self.rotations:
            a, (bp, bm) = min(r.moves().items(), key=lambda kv: repr(kv[0]))
            self._probe.append((a, bm))

    def __len__(self):
        return len(self.rotations)

    @property
    def ids(self) -> range:
        return range(len(self.rotations))

    def geq(self, i: int, j: int) -> bool:
        """rho_i ⊵ rho_j"""
        return i in self.above[j]

    def is_upset(self, r: Iterable) -> bool:
        r = set(r)
        return all(self.above[i] <= r for i in r)

    def upset_of(self, m: Matching) -> frozenset:
        out = []
        for i, (a, bm) in enumerate(self._probe):
            if self.rank(a, m[a]) >= self.rank(a, bm):
                out.append(i)
        return frozenset(out)

    def matching_of(self, r: Iterable, check: bool = True) -> Matching:
        r = sorted(set(r))
        if check and not self.is_upset(r):
            raise NotUpset("rotation set is not upper-closed")
        d = self.m0.as_dict()
        for i in r:
            for a, b in self.rotations[i].minus:
                d[a] = b
        return Matching(d)

    def upper_closure(self, r: Iterable) -> frozenset:
        out = set()
        for i in r:
            out |= self.above[i]
        return frozenset(out)

    def enumerate_upsets(self, limit: int = 10**6) -> list:
        return enumerate_upsets(self, limit)


def enumerate_upsets(order: RotationOrder, limit: int = 10**6) -> list:
    """All upper-closed sets, by include/exclude in id order."""
    n = len(order)
    out = []
    cur = []

    def rec(i, chosen):
        if i == n:
            out.append(frozenset(cur))
            if len(out) > limit:
                raise LimitExceeded(f"more than {limit} upsets")
            return
        rec(i + 1, chosen)
        if order.parents[i] <= chosen:
            cur.append(i)
            chosen.add(i)
            rec(i + 1, chosen)
            chosen.discard(i)
            cur.pop()

    rec(0, set())
    return out


def _chain(inst: Instance, m0: Matching, mz: Matching) -> list:
    """Eliminate from M0 to Mz, always taking the first exposed rotation."""
    m, seq = m0, []
    while m != mz:
        raw = _exposed_raw(inst, m, mz)
        if not raw:
            raise RuntimeError("no exposed rotation before reaching Mz")
        plus, minus = raw[0]
        seq.append((plus, minus))
        m = _apply(m, plus, minus)
    return seq


def all_rotations(inst: Instance) -> list:
    """R(I) in first-extraction order, ids 0..k-1."""
    m0 = deferred_acceptance(inst, "students")
    mz = deferred_acceptance(inst, "schools")
    return [Rotation(i, p, q) for i, (p, q) in enumerate(_chain(inst, m0, mz))]


def _greedy_fixpoint(inst, m0, mz, index, by_id, forbidden, descending=False):
    """Eliminated set of the greedy run that never eliminates `forbidden`."""
    m, elim = m0, set()
    while True:
        cand = [index[k] for k in _exposed_raw(inst, m, mz)]
        cand = [i for i in cand if i != forbidden]
        if not cand:
            return elim
        i = max(cand) if descending else min(cand)
        elim.add(i)
        m = _apply(m, *by_id[i])


def rotation_order(inst: Instance, descending: bool = False) -> RotationOrder:
    """Full ⊵ via the forbidden-rotation greedy.

    For each rho', eliminate greedily everything except rho'; what stays
    uneliminated is the down-set {rho'' : rho' ⊵ rho''}.
    """
    m0 = deferred_acceptance(inst, "students")
    mz = deferred_acceptance(inst, "schools")
    rots = [Rotation(i, p, q) for i, (p, q) in enumerate(_chain(inst, m0, mz))]
    index = {r.key: r.id for r in rots}
    by_id = {r.id: r.key for r in rots}
    n = len(rots)
    above = {i: {i} for i in range(n)}
    for j in range(n):
        elim = _greedy_fixpoint(inst, m0, mz, index, by_id, j, descending)
        for i in range(n):
            if i not in elim:
                above[i].add(j)
    sr = inst.srank
    return RotationOrder(
        m0, mz, rots, {i: frozenset(s) for i, s in above.items()},
        rank=lambda a, b: sr[a][b], inst=inst,
    )
