"""Two-stage stochastic stable matching.

The first-stage instance I and the scenario instances J_1..J_K are glued into
a disjoint union whose rotation poset is the disjoint union of the component
posets. The expected cost c1 + Σ p_k (c2 + d) is then a representable
objective on the union, built from closed-form differentials.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal, localcontext
from fractions import Fraction
from functools import cached_property
from typing import Callable

from .matching_core import OUTSIDE, Instance, Matching, restrict
from .mincut_framework import (
    ObjectiveSpec,
    SublatticeSpec,
    Tables,
    build_cut_digraph,
    meta_rotations,
    minimize,
    minimize_bundle,
)
from .rotation_lattice import Rotation, RotationOrder, rotation_order

ZERO = Fraction(0)


def pos(x) -> Fraction:
    return x if x > 0 else ZERO


def interval_overlap(x, y, z, w) -> Fraction:
    """|[x,y] ∩ [z,w]| for x <= y, z <= w, via the four-term identity."""
    return pos(z - y) + pos(w - x) - pos(z - x) - pos(w - y)


@dataclass(frozen=True)
class SubSpec:
    """Sub-market: kept agents (None keeps everyone) and quota overrides."""

    students: frozenset | None = None
    schools: frozenset | None = None
    quota: tuple = ()  # sorted (school, q) pairs

    @classmethod
    def make(cls, students=None, schools=None, quota=None):
        return cls(
            None if students is None else frozenset(students),
            None if schools is None else frozenset(schools),
            tuple(sorted((quota or {}).items(), key=lambda kv: str(kv[0]))),
        )

    def build(self, aggregate: Instance) -> Instance:
        sa = aggregate.students if self.students is None else self.students
        sb = aggregate.schools if self.schools is None else self.schools
        unknown = (set(sa) - set(aggregate.students)) | (set(sb) - set(aggregate.schools))
        if unknown:
            raise ValueError(f"unknown agents in sub-market: {sorted(map(str, unknown))}")
        return restrict(aggregate, sa, sb, dict(self.quota))


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: SubSpec
    p: Fraction


class DepartureSampler:
    """Every agent of the first stage stays with probability 1 - p."""

    def __init__(self, p):
        self.p = Fraction(p)
        if not 0 <= self.p <= 1:
            raise ValueError("departure probability must lie in [0, 1]")

    def draw(self, rng: random.Random, first: Instance) -> SubSpec:
        keep_a = [a for a in first.students if rng.random() >= self.p]
        keep_b = [b for b in first.schools if rng.random() >= self.p]
        return SubSpec.make(keep_a, keep_b)


class ChoiceSampler:
    """Draws one of finitely many sub-markets with given probabilities."""

    def __init__(self, options):
        self.options = [(spec, Fraction(p)) for spec, p in options]
        if sum(p for _, p in self.options) != 1:
            raise ValueError("probabilities must sum to 1")

    def draw(self, rng: random.Random, first: Instance) -> SubSpec:
        u = Fraction(rng.random())
        acc = ZERO
        for spec, p in self.options:
            acc += p
            if u < acc:
                return spec
        return self.options[-1][0]


@dataclass(eq=False)
class TwoStageInstance:
    aggregate: Instance
    first: SubSpec = field(default_factory=SubSpec)
    scenarios: tuple = ()
    sampler: object = None
    c1: dict = field(default_factory=dict)
    c2: dict = field(default_factory=dict)
    lam: Fraction = Fraction(1)
    w: dict | None = None

    def __post_init__(self):
        self.lam = Fraction(self.lam)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        self.c1 = {k: Fraction(v) for k, v in self.c1.items()}
        self.c2 = {k: Fraction(v) for k, v in self.c2.items()}
        self.scenarios = tuple(self.scenarios)
        if self.w is not None:
            self.w = {k: Fraction(v) for k, v in self.w.items()}
            self._check_weights()
        self._orders = {}

    def _check_weights(self):
        # w must not decrease as the school gets worse for the student
        agg = self.aggregate
        for a in agg.students:
            prev = None
            for b in agg.student_pref[a]:
                if (a, b) not in self.w:
                    raise ValueError(f"weight missing for ({a}, {b})")
                v = self.w[(a, b)]
                if v < 0:
                    raise ValueError("weights must be non-negative")
                if prev is not None and v < prev:
                    raise ValueError(f"weights of {a} must be non-decreasing down the preference list")
                prev = v

    def g(self, a, b) -> Fraction:
        """Dissatisfaction scale: aggregate rank, or w in weight mode."""
        if self.w is not None:
            return self.w[(a, b)]
        return Fraction(self.aggregate.rank(a, b))

    @cached_property
    def first_instance(self) -> Instance:
        return self.first.build(self.aggregate)

    def instance(self, spec: SubSpec) -> Instance:
        return spec.build(self.aggregate)

    def order_of(self, spec: SubSpec) -> tuple:
        hit = self._orders.get(spec)
        if hit is None:
            inst = self.first_instance if spec == self.first else self.instance(spec)
            hit = (inst, rotation_order(inst))
            self._orders[spec] = hit
        return hit

    def check_probabilities(self):
        if not self.scenarios:
            raise ValueError("no explicit scenarios")
        if sum(s.p for s in self.scenarios) != 1:
            raise ValueError("scenario probabilities must sum to 1")

    def with_scenarios(self, scenarios) -> "TwoStageInstance":
        ts = TwoStageInstance(self.aggregate, self.first, tuple(scenarios), None, self.c1, self.c2, self.lam, self.w)
        ts._orders = self._orders
        return ts


def cost_of(costs: dict, m: Matching) -> Fraction:
    return sum((costs.get((a, b), ZERO) for a, b in m.items()), ZERO)


def egalitarian_costs(inst: Instance) -> dict:
    """c(ab) = (R_a(b) + R_b(a)) / 2 over all student-school pairs."""
    return {
        (a, b): Fraction(inst.srank[a][b] + inst.brank[b][a] + 2, 2)
        for a in inst.students
        for b in inst.schools
    }


# -- disjoint union ---------------------------------------------------------------


class UnionInstance:
    """Tagged disjoint union; agent copies are (tag, id) tuples."""

    def __init__(self, components):
        # components: list of (tag, Instance, RotationOrder)
        self.components = list(components)
        self.tags = [t for t, _, _ in self.components]
        if len(set(self.tags)) != len(self.tags):
            raise ValueError("component tags must be unique")
        self.offsets, self.rot_comp = [], []
        rots, above = [], {}
        off = 0
        for k, (tag, inst, order) in enumerate(self.components):
            self.offsets.append(off)
            for r in order.rotations:
                plus = frozenset(((tag, a), (tag, b)) for a, b in r.plus)
                minus = frozenset(((tag, a), (tag, b)) for a, b in r.minus)
                rots.append(Rotation(off + r.id, plus, minus))
                above[off + r.id] = frozenset(off + j for j in order.above[r.id])
                self.rot_comp.append((k, r.id))
            off += len(order.rotations)
        ranks = {tag: inst.srank for tag, inst, _ in self.components}

        def rank(x, b):
            tag, a = x
            return ranks[tag][a][b if b == OUTSIDE else b[1]]

        self.order = RotationOrder(
            self.lift([o.m0 for _, _, o in self.components]),
            self.lift([o.mz for _, _, o in self.components]),
            rots, above, rank=rank,
        )

    def lift(self, matchings) -> Matching:
        d = {}
        for (tag, _, _), m in zip(self.components, matchings):
            for a, b in m.items():
                d[(tag, a)] = b if b == OUTSIDE else (tag, b)
        return Matching(d)

    def project(self, m: Matching, k: int) -> Matching:
        tag, inst, _ = self.components[k]
        out = {}
        for a in inst.students:
            b = m[(tag, a)]
            out[a] = b if b == OUTSIDE else b[1]
        return Matching(out)

    @cached_property
    def inst(self) -> Instance:
        """The union as one instance (cross copies rank each other after OUTSIDE)."""
        students, schools, quota, sp, bp = [], [], {}, {}, {}
        for tag, inst, _ in self.components:
            students += [(tag, a) for a in inst.students]
            schools += [(tag, b) for b in inst.schools]
            quota.update({(tag, b): q for b, q in inst.quota.items()})
        for tag, inst, _ in self.components:
            for a in inst.students:
                own = [x if x == OUTSIDE else (tag, x) for x in inst.student_pref[a]]
                sp[(tag, a)] = own + [b for b in schools if b[0] != tag]
            for b in inst.schools:
                own = [x if x == OUTSIDE else (tag, x) for x in inst.school_pref[b]]
                bp[(tag, b)] = own + [a for a in students if a[0] != tag]
        return Instance(students, schools, quota, sp, bp)


def disjoint_union(ts: TwoStageInstance, specs) -> UnionInstance:
    """Union of I (tag 'I') and the given scenario sub-markets (tags J1..)."""
    comps = [("I", *ts.order_of(ts.first))]
    for k, spec in enumerate(specs, 1):
        comps.append((f"J{k}", *ts.order_of(spec)))
    return UnionInstance(comps)


# -- objective pieces ----------------------------------------------------------------


def _path(order: RotationOrder, a):
    """Stable partners of a in M0 -> Mz order with the local rotation entering each."""
    out = [(order.m0[a], None)]
    for r in order.rotations:
        mv = r.moves()
        if a in mv:
            out.append((mv[a][1], r.id))
    return out


@dataclass
class _Acc:
    base: Fraction = ZERO
    d1: dict = field(default_factory=dict)
    d2: dict = field(default_factory=dict)

    def add1(self, i, v):
        if v:
            self.d1[i] = self.d1.get(i, ZERO) + v

    def add2(self, i, j, v):
        if v:
            self.d2[(i, j)] = self.d2.get((i, j), ZERO) + v
            self.d2[(j, i)] = self.d2.get((j, i), ZERO) + v

    def tables(self, n) -> Tables:
        d1 = {i: self.d1.get(i, ZERO) for i in range(n)}
        d2 = {k: v for k, v in self.d2.items() if v}
        return Tables(self.base, d1, d2)


def _add_linear(acc: _Acc, u: UnionInstance, k: int, costs: dict, scale: Fraction):
    tag, inst, order = u.components[k]
    off = u.offsets[k]
    acc.base += scale * cost_of(costs, order.m0)
    for r in order.rotations:
        v = sum((costs.get(p, ZERO) for p in r.minus), ZERO) - sum((costs.get(p, ZERO) for p in r.plus), ZERO)
        acc.add1(off + r.id, scale * v)


def _add_f3(acc: _Acc, ts: TwoStageInstance, u: UnionInstance, a, k: int, scale: Fraction):
    """Closed-form differentials of [g(M^{J_k}(a)) - g(M^I(a))]^+."""
    _, _, oI = u.components[0]
    _, _, oJ = u.components[k]
    offI, offJ = u.offsets[0], u.offsets[k]
    g = ts.g
    pI, pJ = _path(oI, a), _path(oJ, a)
    gI0, gJ0 = g(a, pI[0][0]), g(a, pJ[0][0])
    if pI[0][0] == OUTSIDE:
        return  # J partners are acceptable, so the drop is never positive
    if pJ[0][0] == OUTSIDE:
        # constant g(OUTSIDE) minus a linear term in the first stage
        acc.base += scale * (gJ0 - gI0)
        for (x, _), (y, rid) in zip(pI, pI[1:]):
            acc.add1(offI + rid, scale * (g(a, x) - g(a, y)))
        return
    acc.base += scale * pos(gJ0 - gI0)
    stepsI = [(g(a, x), g(a, y), offI + rid) for (x, _), (y, rid) in zip(pI, pI[1:])]
    stepsJ = [(g(a, x), g(a, y), offJ + rid) for (x, _), (y, rid) in zip(pJ, pJ[1:])]
    for x, y, rid in stepsI:
        acc.add1(rid, scale * (pos(gJ0 - y) - pos(gJ0 - x)))
    for x, y, rid in stepsJ:
        acc.add1(rid, scale * (pos(y - gI0) - pos(x - gI0)))
    for x, y, ri in stepsI:
        for z, w, rj in stepsJ:
            acc.add2(ri, rj, scale * interval_overlap(x, y, z, w))


def f3_tables(ts: TwoStageInstance, u: UnionInstance, a, k: int) -> Tables:
    acc = _Acc()
    _add_f3(acc, ts, u, a, k, Fraction(1))
    return acc.tables(len(u.order))


def f3_direct(ts: TwoStageInstance, u: UnionInstance, a, k: int) -> Callable:
    tagI, tagJ = u.tags[0], u.tags[k]

    def f(m: Matching) -> Fraction:
        bI, bJ = m[(tagI, a)], m[(tagJ, a)]
        bI = bI if bI == OUTSIDE else bI[1]
        bJ = bJ if bJ == OUTSIDE else bJ[1]
        return pos(ts.g(a, bJ) - ts.g(a, bI))

    return f


def common_students(u: UnionInstance, k: int) -> list:
    present = set(u.components[k][1].students)
    return [a for a in u.components[0][1].students if a in present]


def two_stage_tables(ts: TwoStageInstance, u: UnionInstance, probs) -> Tables:
    """Tables of f1 + Σ p_k f2_k + λ Σ p_k Σ_a f3_{a,k} on the union."""
    acc = _Acc()
    _add_linear(acc, u, 0, ts.c1, Fraction(1))
    for k, p in enumerate(probs, 1):
        _add_linear(acc, u, k, ts.c2, p)
        if ts.lam:
            for a in common_students(u, k):
                _add_f3(acc, ts, u, a, k, ts.lam * p)
    return acc.tables(len(u.order))


def dissatisfaction(ts: TwoStageInstance, mI: Matching, mJ: Matching) -> Fraction:
    total = ZERO
    for a, bJ in mJ.items():
        if a in mI:
            total += pos(ts.g(a, bJ) - ts.g(a, mI[a]))
    return ts.lam * total


def stage_value(ts: TwoStageInstance, mI: Matching, mJs, probs) -> Fraction:
    """(EXP-2STO) evaluated at explicit first- and second-stage matchings."""
    v = cost_of(ts.c1, mI)
    for mJ, p in zip(mJs, probs):
        v += p * (cost_of(ts.c2, mJ) + dissatisfaction(ts, mI, mJ))
    return v


def second_stage_best(ts: TwoStageInstance, mI: Matching, spec: SubSpec) -> tuple:
    """Best recourse in one scenario: a linear objective on J alone."""
    inst, order = ts.order_of(spec)
    # only stable pairs can matter
    stable_pairs = set(order.m0.items())
    for r in order.rotations:
        stable_pairs |= r.minus
    weights = {}
    for a, b in stable_pairs:
        v = ts.c2.get((a, b), ZERO)
        if a in mI and ts.lam:
            v += ts.lam * pos(ts.g(a, b) - ts.g(a, mI[a]))
        if v:
            weights[(a, b)] = v
    return minimize(order, SublatticeSpec.all(), ObjectiveSpec.linear(weights))


def evaluate_first_stage(ts: TwoStageInstance, mI: Matching, scenarios=None) -> Fraction:
    scenarios = ts.scenarios if scenarios is None else scenarios
    v = cost_of(ts.c1, mI)
    for s in scenarios:
        v += s.p * second_stage_best(ts, mI, s.spec)[1]
    return v


@dataclass
class TwoStageResult:
    first: Matching
    second: list
    value: Fraction
    union: UnionInstance = field(repr=False)
    bundle: object = field(repr=False, default=None)
    upset: frozenset = field(repr=False, default=frozenset())


def build_two_stage_bundle(ts: TwoStageInstance, gamma=None):
    u = disjoint_union(ts, [s.spec for s in ts.scenarios])
    probs = [s.p for s in ts.scenarios]
    tables = two_stage_tables(ts, u, probs)
    part = meta_rotations(u.order, SublatticeSpec.all())
    return u, build_cut_digraph(u.order, part, tables, gamma)


def solve_exp_2sto(ts: TwoStageInstance, gamma=None) -> TwoStageResult:
    ts.check_probabilities()
    u, bundle = build_two_stage_bundle(ts, gamma)
    m, value, r = minimize_bundle(bundle)
    mI = u.project(m, 0)
    mJs = [u.project(m, k) for k in range(1, len(u.components))]
    direct = stage_value(ts, mI, mJs, [s.p for s in ts.scenarios])
    if direct != value:
        raise AssertionError(f"cut value {value} disagrees with direct evaluation {direct}")
    return TwoStageResult(mI, mJs, value, u, bundle, r)


def empirical(specs) -> list:
    """Merge repeated sub-markets into scenarios with empirical probabilities."""
    counts = {}
    for s in specs:
        counts[s] = counts.get(s, 0) + 1
    n = len(specs)
    return [Scenario(f"S{i + 1}", s, Fraction(c, n)) for i, (s, c) in enumerate(counts.items())]


def hindsight_best(ts: TwoStageInstance, realized) -> TwoStageResult:
    """M^off: optimal first stage against the realized list (empirical weights)."""
    return solve_exp_2sto(ts.with_scenarios(empirical(list(realized))))


def sample_budget() -> int:
    return int(os.environ.get("STABLECUT_MAX_SAMPLES", "1000000"))


def sample_count(ts: TwoStageInstance, epsilon, alpha) -> int:
    epsilon, alpha = Fraction(epsilon), Fraction(alpha)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    agg = ts.aggregate
    nA, nB = len(agg.students), len(agg.schools)
    cmax = max((abs(v) for v in ts.c2.values()), default=ZERO)
    lead = (4 * nA * (cmax + ts.lam * nB)) ** 2
    with localcontext() as ctx:
        ctx.prec = 60
        logs = max(nA, nB) * Decimal("3.88").ln() - (Decimal(alpha.numerator) / Decimal(alpha.denominator)).ln()
        k = Decimal(lead.numerator) / Decimal(lead.denominator) * logs
        k = k * Decimal(epsilon.denominator) ** 2 / Decimal(epsilon.numerator) ** 2
        return max(1, int(k.to_integral_value(rounding=ROUND_CEILING)))


@dataclass
class SaaResult:
    first: Matching
    value: Fraction
    samples: int
    capped: bool
    scenarios: list = field(repr=False, default_factory=list)


def draw_samples(ts: TwoStageInstance, k: int, seed: int) -> list:
    if ts.sampler is None:
        raise ValueError("no sampler configured")
    rng = random.Random(seed)
    first = ts.first_instance
    return [ts.sampler.draw(rng, first) for _ in range(k)]


def solve_saa(ts: TwoStageInstance, epsilon, alpha, seed: int, cap: int | None = None) -> SaaResult:
    k = sample_count(ts, epsilon, alpha)
    cap = sample_budget() if cap is None else cap
    capped = k > cap
    k = min(k, cap)
    scen = empirical(draw_samples(ts, k, seed))
    res = solve_exp_2sto(ts.with_scenarios(scen))
    return SaaResult(res.first, res.value, k, capped, scen)
