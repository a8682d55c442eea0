"""Sibling placement problems: same school (MSSS), same activity (MSSP), MSDP.

"Co-located" always means both siblings sit at the same real school;
two unmatched siblings are not co-located.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .flow_solver import SINK, SOURCE, FlowNetwork
from .matching_core import (
    OUTSIDE,
    Instance,
    LimitExceeded,
    Matching,
    deferred_acceptance,
)
from .mincut_framework import (
    CutDigraphBundle,
    ObjectiveSpec,
    SublatticeSpec,
    Tables,
    build_cut_digraph,
    conic_combine,
    differentials,
    meta_rotations,
    minimize_bundle,
    skeleton_arcs,
)
from .rotation_lattice import RotationOrder, enumerate_upsets, rotation_order

ONE = Fraction(1)
EMPTY = "EMPTY"  # rotation that is always eliminated
INFTY = "INFTY"  # rotation that is never eliminated


class AssumptionViolated(ValueError):
    pass


class ActivityError(ValueError):
    pass


@dataclass(frozen=True)
class SiblingInstance:
    base: Instance
    pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        students = set(self.base.students)
        for a, abar in self.pairs:
            if a == abar:
                raise ValueError(f"sibling pair ({a}, {abar}) repeats a student")
            if a not in students or abar not in students:
                raise ValueError(f"unknown student in pair ({a}, {abar})")


def co_located(m: Matching, a, abar) -> bool:
    return m[a] != OUTSIDE and m[a] == m[abar]


def separated_count(m: Matching, pairs) -> int:
    return sum(not co_located(m, a, abar) for a, abar in pairs)


# -- Assumption 1 normalisation ------------------------------------------------


@dataclass(frozen=True)
class _Dummy:
    kind: str  # "first" or "second"
    student: object  # a (first) or ā (second)
    school: object  # b or b̄
    d: str
    s: str


@dataclass(frozen=True)
class Normalized:
    inst: Instance
    pairs: tuple
    original: Instance
    records: tuple = field(default=())

    def forward(self, m: Matching) -> Matching:
        d = m.as_dict()
        for r in self.records:
            d[r.d] = r.s
        return Matching(d)

    def backward(self, m: Matching) -> Matching:
        d = m.as_dict()
        for r in reversed(self.records):
            if d[r.d] != r.s:
                # the dummies hold (student, s) and (d, school); restore the pair
                d[r.student] = r.school
            del d[r.d]
        return Matching({a: d[a] for a in self.original.students})


def _insert(seq, item, *, before=None, after=None):
    seq = list(seq)
    if before is not None:
        seq.insert(seq.index(before), item)
    else:
        seq.insert(seq.index(after) + 1, item)
    return seq


def _add_dummies(inst: Instance, rec: _Dummy, partner) -> Instance:
    """partner is a (first kind: a_worst) or ā (second kind)."""
    sp = {a: list(p) for a, p in inst.student_pref.items()}
    bp = {b: list(p) for b, p in inst.school_pref.items()}
    x, b, d, s = rec.student, rec.school, rec.d, rec.s
    for a in inst.students:
        if a == x:
            sp[a] = _insert(sp[a], s, before=b) if rec.kind == "first" else _insert(sp[a], s, after=b)
        else:
            sp[a].append(s)
    for c in inst.schools:
        if c == b:
            bp[c] = _insert(bp[c], d, after=partner) if rec.kind == "first" else _insert(bp[c], d, before=partner)
        else:
            bp[c].append(d)
    rest_b = [c for c in inst.schools if c != b]
    rest_a = [a for a in inst.students if a != x]
    if rec.kind == "first":
        sp[d] = [b, s, OUTSIDE] + rest_b
        bp[s] = [d, x, OUTSIDE] + rest_a
    else:
        sp[d] = [s, b, OUTSIDE] + rest_b
        bp[s] = [x, d, OUTSIDE] + rest_a
    quota = dict(inst.quota)
    quota[s] = 1
    return Instance(list(inst.students) + [d], list(inst.schools) + [s], quota, sp, bp)


def normalize_msss(si: SiblingInstance) -> Normalized:
    """Add dummy agents until no pair shares a school in M0 or in Mz.

    The Mz step moves the sibling that its school ranks last among the
    whole roster; when that student is not a sibling the pair is left as it
    is (the pair tables do not rely on the normalisation).
    """
    inst, records, k = si.base, [], 0
    for _ in range(4 * len(si.pairs) + 1):
        changed = False
        for a, abar in si.pairs:
            m0 = deferred_acceptance(inst, "students")
            if co_located(m0, a, abar):
                b = m0[a]
                worst = max(m0.roster(b), key=inst.brank[b].__getitem__)
                k += 1
                rec = _Dummy("first", a, b, f"_d{k}", f"_s{k}")
                inst = _add_dummies(inst, rec, worst)
                records.append(rec)
                changed = True
            mz = deferred_acceptance(inst, "schools")
            if co_located(mz, a, abar):
                bbar = mz[abar]
                worst = max(mz.roster(bbar), key=inst.brank[bbar].__getitem__)
                if worst not in (a, abar):
                    continue
                k += 1
                rec = _Dummy("second", worst, bbar, f"_d{k}", f"_s{k}")
                inst = _add_dummies(inst, rec, worst)
                records.append(rec)
                changed = True
        if not changed:
            break
    return Normalized(inst, si.pairs, si.base, tuple(records))


def check_assumption(inst: Instance, pairs, m0=None, mz=None) -> None:
    m0 = m0 if m0 is not None else deferred_acceptance(inst, "students")
    mz = mz if mz is not None else deferred_acceptance(inst, "schools")
    for a, abar in pairs:
        if co_located(m0, a, abar) or co_located(mz, a, abar):
            raise AssumptionViolated(f"pair ({a}, {abar}) shares a school in M0 or Mz")


def _chain_matchings(order: RotationOrder):
    """(rotation id, before, after) along the elimination chain in id order."""
    m = order.m0
    for i, r in enumerate(order.rotations):
        d = m.as_dict()
        d.update(dict(r.minus))
        nxt = Matching(d)
        yield i, m, nxt
        m = nxt


def rho_in_out(order: RotationOrder, a, abar, b):
    """(ρ_in, ρ_out) for co-location of (a, ā) at b, or None."""
    if order.inst is not None:
        check_assumption(order.inst, [(a, abar)], order.m0, order.mz)
    rin = rout = None
    for i, before, after in _chain_matchings(order):
        was = co_located(before, a, abar) and before[a] == b
        now = co_located(after, a, abar) and after[a] == b
        if now and not was:
            rin = i
        elif was and not now:
            rout = i
    if rin is None:
        return None
    return rin, rout


def msss_pair_tables(order: RotationOrder, a, abar) -> Tables:
    """Closed-form differentials of f = [a, ā not co-located].

    Co-location at a school holds on an interval of the rotation chain, so
    f is modular and ∂f(ρ) is the change of f when ρ is eliminated.
    """
    def f(m):
        return Fraction(0) if co_located(m, a, abar) else ONE

    d1 = {i: f(after) - f(before) for i, before, after in _chain_matchings(order)}
    return Tables(f(order.m0), d1, {})


def msss_indicator(a, abar) -> Callable:
    return lambda m: Fraction(0 if co_located(m, a, abar) else 1)


def solve_msss(si: SiblingInstance) -> tuple:
    """Stable matching of si.base with the fewest separated pairs."""
    if not si.pairs:
        return deferred_acceptance(si.base, "students"), 0
    norm = normalize_msss(si)
    order = rotation_order(norm.inst)
    part = meta_rotations(order, SublatticeSpec.all())
    bundles = [build_cut_digraph(order, part, msss_pair_tables(order, a, abar)) for a, abar in norm.pairs]
    bundle = conic_combine(bundles, [1] * len(bundles))
    m_norm, value, _ = minimize_bundle(bundle)
    m = norm.backward(m_norm)
    count = separated_count(m, si.pairs)
    assert count <= value
    return m, count


# -- activities ------------------------------------------------------------------


@dataclass(frozen=True)
class ActivityStructure:
    activities: dict  # name -> tuple of classes (schools)

    def __post_init__(self):
        object.__setattr__(self, "activities", {k: tuple(v) for k, v in self.activities.items()})
        act = {}
        for name, classes in self.activities.items():
            for c in classes:
                if c in act:
                    raise ActivityError(f"class {c} appears in two activities")
                act[c] = name
        object.__setattr__(self, "_of", act)

    def activity_of(self, school):
        return self._of.get(school) if school != OUTSIDE else None

    def validate(self, inst: Instance, pairs=()) -> None:
        if set(self._of) != set(inst.schools):
            raise ActivityError("activities must partition the schools exactly")
        for a in inst.students:
            seen = set()
            for b in self.acceptable_classes(inst, a):
                t = self._of[b]
                if t in seen:
                    raise ActivityError(f"{a} ranks two classes of activity {t} above {OUTSIDE}")
                seen.add(t)
        for a, abar in pairs:
            self.merged_order(inst, a, abar)

    def acceptable_classes(self, inst: Instance, a) -> list:
        p = inst.student_pref[a]
        return list(p[: p.index(OUTSIDE)])

    def student_order(self, inst: Instance, a) -> list:
        return [self._of[b] for b in self.acceptable_classes(inst, a)]

    def merged_order(self, inst: Instance, a, abar) -> list:
        """A total order of activities consistent with both siblings' lists."""
        oa, ob = self.student_order(inst, a), self.student_order(inst, abar)
        common = [t for t in oa if t in set(ob)]
        if common != [t for t in ob if t in set(oa)]:
            raise ActivityError(f"siblings {a} and {abar} rank activities in different orders")
        out, i, j = [], 0, 0
        while i < len(oa) or j < len(ob):
            if i < len(oa) and oa[i] not in set(ob):
                out.append(oa[i])
                i += 1
            elif j < len(ob) and ob[j] not in set(oa):
                out.append(ob[j])
                j += 1
            else:
                out.append(oa[i])
                i += 1
                j += 1
        return out


def activity_stable(m: Matching, acts: ActivityStructure, pairs) -> bool:
    for a, abar in pairs:
        ta, tb = acts.activity_of(m[a]), acts.activity_of(m[abar])
        if ta is None or ta != tb:
            return False
    return True


@dataclass(frozen=True)
class IrpSpec:
    theta: object  # rotation id, EMPTY or INFTY
    theta_bar: object

    def __post_init__(self):
        if self.theta in (EMPTY, INFTY) and self.theta_bar in (EMPTY, INFTY):
            raise ValueError("an IRP needs at least one real rotation")


def irp_digraph(order: RotationOrder, spec: IrpSpec) -> CutDigraphBundle:
    """Zero-valued finite cuts are exactly the upsets satisfying the IRP."""
    part = meta_rotations(order, SublatticeSpec.all())
    arcs = skeleton_arcs(order, part)
    t, tb = spec.theta, spec.theta_bar
    if t == EMPTY or tb == EMPTY:
        other = tb if t == EMPTY else t
        arcs.append((SOURCE, other, ONE))
    elif t == INFTY or tb == INFTY:
        other = tb if t == INFTY else t
        arcs.append((other, SINK, ONE))
    else:
        arcs.append((t, tb, ONE))
        arcs.append((tb, t, ONE))
    net = FlowNetwork(tuple(arcs), frozenset(order.ids))
    theta_of = {i: i for i in order.ids}
    return CutDigraphBundle(net, Fraction(0), Fraction(0), theta_of, order, part)


def _stable_path(order: RotationOrder, a) -> list:
    """[(partner, rotation id entering it or None)] along the id-order chain."""
    path = [(order.m0[a], None)]
    for i, r in enumerate(order.rotations):
        mv = r.moves()
        if a in mv:
            path.append((mv[a][1], i))
    return path


def mssp_pair_family(order: RotationOrder, inst: Instance, acts: ActivityStructure, a, abar):
    """('IRP', [IrpSpec]) or ('LINEAR', weights) for one sibling pair.

    Co-location in an activity is encoded through threshold indicators
    [position of a's activity >= l] for every activity position l that one
    of the siblings can occupy; the pair is co-located iff the indicators of
    a and ā agree for every such l.
    """
    merged = acts.merged_order(inst, a, abar)
    pos = {t: i for i, t in enumerate(merged)}
    pa = [(pos[acts.activity_of(b)], r) for b, r in _stable_path(order, a) if b != OUTSIDE]
    pb = [(pos[acts.activity_of(b)], r) for b, r in _stable_path(order, abar) if b != OUTSIDE]
    la, lb = {p for p, _ in pa}, {p for p, _ in pb}
    inter = la & lb
    if len(inter) < 2:
        w = {}
        keep = {merged[p] for p in inter}
        for x in (a, abar):
            for b in list(inst.schools) + [OUTSIDE]:
                if acts.activity_of(b) not in keep:
                    w[(x, b)] = ONE
        return "LINEAR", w

    def indicator(path, l):
        if l <= path[0][0]:
            return EMPTY
        for p, r in path[1:]:
            if p >= l:
                return r
        return INFTY

    specs = []
    for l in sorted(la | lb):
        t, tb = indicator(pa, l), indicator(pb, l)
        if t == tb and t in (EMPTY, INFTY):
            continue
        specs.append(IrpSpec(t, tb))
    return "IRP", specs


def solve_mssp(inst: Instance, acts: ActivityStructure, pairs, order: RotationOrder | None = None):
    """Activity-stable matching (⊵-least) or None when none exists."""
    acts.validate(inst, pairs)
    order = rotation_order(inst) if order is None else order
    if not pairs:
        return order.m0
    part = meta_rotations(order, SublatticeSpec.all())
    bundles = []
    for a, abar in pairs:
        kind, obj = mssp_pair_family(order, inst, acts, a, abar)
        if kind == "LINEAR":
            tables = differentials(order, part, ObjectiveSpec.linear(obj))
            bundles.append(build_cut_digraph(order, part, tables))
        else:
            bundles.extend(irp_digraph(order, s) for s in obj)
    if not bundles:
        return order.m0
    bundle = conic_combine(bundles, [1] * len(bundles))
    m, value, _ = minimize_bundle(bundle)
    return m if value == 0 else None


def solve_msdp_bruteforce(inst: Instance, acts: ActivityStructure, pairs, limit: int = 10**6, order=None):
    """Scan every stable matching for an activity-stable one (NP-hard in general)."""
    order = rotation_order(inst) if order is None else order
    try:
        ups = enumerate_upsets(order, limit)
    except LimitExceeded as e:
        raise LimitExceeded(f"{e}; MSDP is NP-complete, so only exhaustive search is offered") from None
    for r in sorted(ups, key=lambda r: (len(r), sorted(r))):
        m = order.matching_of(r, check=False)
        if activity_stable(m, acts, pairs):
            return m
    return None
