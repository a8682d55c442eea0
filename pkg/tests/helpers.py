"""Shared fixtures, random generators and independent brute-force oracles."""

from __future__ import annotations

import itertools
import random
from fractions import Fraction
from pathlib import Path

from stablecut.formats import parse
from stablecut.matching_core import OUTSIDE, Instance, Matching
from stablecut.mincut_framework import ObjectiveSpec, SublatticeSpec, differentials, f_aprx, meta_rotations
from stablecut.rotation_lattice import enumerate_upsets
from stablecut.siblings_apps import ActivityStructure
from stablecut.two_stage import Scenario, SubSpec, TwoStageInstance, common_students, f3_direct, f3_tables

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (PASS | FAIL, note), filled by the acceptance suite
ACCEPTANCE: dict = {}


def load(name: str):
    return parse((FIXTURES / f"{name}.txt").read_text())


def m_of(**kw) -> Matching:
    return Matching(kw)


def random_instance(rng: random.Random, n_a: int, n_b: int, qmax: int = 1, p_cut: float = 0.3) -> Instance:
    """Random market; some lists are truncated early to create unacceptable pairs."""
    students = [f"a{i}" for i in range(1, n_a + 1)]
    schools = [f"b{j}" for j in range(1, n_b + 1)]

    def order(others):
        lst = rng.sample(others, len(others))
        cut = len(lst)
        if rng.random() < p_cut:
            cut = rng.randint(0, len(lst))
        return lst[:cut] + [OUTSIDE] + lst[cut:]

    sp = {a: order(schools) for a in students}
    bp = {b: order(students) for b in schools}
    quota = {b: rng.randint(1, max(1, min(qmax, n_a))) for b in schools}
    return Instance(students, schools, quota, sp, bp)


# -- oracles written independently of the package internals --------------------


def stable_naive(inst: Instance, assign: dict) -> bool:
    """Blocking-pair and blocking-agent check straight from the definition."""
    sr, br = inst.srank, inst.brank
    roster = {b: [a for a, x in assign.items() if x == b] for b in inst.schools}
    for b, r in roster.items():
        if len(r) > inst.quota[b]:
            return False
        if any(br[b][a] > br[b][OUTSIDE] for a in r):
            return False
    for a, b in assign.items():
        if sr[a][b] > sr[a][OUTSIDE]:
            return False
    for a in inst.students:
        for b in inst.schools:
            if sr[a][b] >= sr[a][assign[a]]:
                continue
            if br[b][a] > br[b][OUTSIDE]:
                continue
            r = roster[b]
            if len(r) < inst.quota[b] or any(br[b][a] < br[b][x] for x in r):
                return False
    return True


def stable_set_naive(inst: Instance) -> set:
    """All stable matchings by itertools.product (tiny instances only)."""
    opts = [list(inst.schools) + [OUTSIDE] for _ in inst.students]
    out = set()
    for combo in itertools.product(*opts):
        assign = dict(zip(inst.students, combo))
        if stable_naive(inst, assign):
            out.add(Matching(assign))
    return out


def linear_cost(weights: dict, m: Matching) -> Fraction:
    return sum((Fraction(weights.get((a, b), 0)) for a, b in m.items()), Fraction(0))


def dissat_naive(inst: Instance, lam, mI: Matching, mJ: Matching, w=None) -> Fraction:
    total = Fraction(0)
    for a, bJ in mJ.items():
        if a not in mI:
            continue
        if w is None:
            gJ, gI = inst.rank(a, bJ), inst.rank(a, mI[a])
        else:
            gJ, gI = w[(a, bJ)], w[(a, mI[a])]
        total += max(Fraction(0), Fraction(gJ - gI))
    return Fraction(lam) * total


def two_stage_bruteforce(ts, stable_sets_I, stable_sets_J, probs):
    """min over S(I) x prod S(J_k) of the expected two-stage cost."""
    best = None
    for mI in stable_sets_I:
        v = linear_cost(ts.c1, mI)
        for SJ, p in zip(stable_sets_J, probs):
            v += p * min(
                linear_cost(ts.c2, mJ) + dissat_naive(ts.aggregate, ts.lam, mI, mJ, ts.w) for mJ in SJ
            )
        if best is None or v < best[0]:
            best = (v, mI)
    return best


def random_subspec(rng: random.Random, inst: Instance, keep: float = 0.7):
    from stablecut.two_stage import SubSpec

    a = [x for x in inst.students if rng.random() < keep] or [inst.students[0]]
    b = [x for x in inst.schools if rng.random() < keep] or [inst.schools[0]]
    return SubSpec.make(a, b)


def conflicted_instance(rng: random.Random, n_a: int, n_b: int, qmax: int = 1, noise: float = 0.3,
                        fixed_quota: bool = False) -> Instance:
    """Schools mostly prefer the students who like them least: many stable matchings."""
    students = [f"a{i}" for i in range(1, n_a + 1)]
    schools = [f"b{j}" for j in range(1, n_b + 1)]
    sp = {a: rng.sample(schools, n_b) + [OUTSIDE] for a in students}
    bp = {}
    for b in schools:
        key = {a: -sp[a].index(b) + rng.uniform(-noise, noise) * n_b for a in students}
        bp[b] = sorted(students, key=key.__getitem__) + [OUTSIDE]
    qmax = min(qmax, n_a)
    quota = {b: qmax if fixed_quota else rng.randint(1, qmax) for b in schools}
    return Instance(students, schools, quota, sp, bp)


def random_pairs(rng, inst, k):
    """(a1, a2) first, then random disjoint pairs among the rest."""
    rest = [a for a in inst.students if a not in ("a1", "a2")]
    st = rng.sample(rest, min(len(rest), 2 * (k - 1)))
    return [("a1", "a2")] + [(st[i], st[i + 1]) for i in range(0, len(st) - 1, 2)]


def colocated_market(rng, n, qmax=2):
    """Contested market where a2 often copies a1's list, so the pair shares schools."""
    n = max(n, 2)
    q = rng.choice([1] + [2, 3][: qmax - 1] * 2) if qmax > 1 else 1
    inst = conflicted_instance(rng, n, max(1, n // q), q, fixed_quota=True)
    if rng.random() < 0.6:
        sp = dict(inst.student_pref)
        sp["a2"] = sp["a1"]
        inst = Instance(inst.students, inst.schools, inst.quota, sp, dict(inst.school_pref))
    return inst


def random_activity_case(rng, n_a, n_t):
    """Contested market whose acceptable lists use one class per activity.

    a2 copies a1's activity order so the pair (a1, a2) is always valid.
    """
    names = [f"t{k}" for k in range(n_t)]
    schools = [f"b{j}" for j in range(1, n_a + 1)]
    acts = {t: [] for t in names}
    for j, b in enumerate(rng.sample(schools, len(schools))):
        acts[names[j % n_t]].append(b)
    students = [f"a{i}" for i in range(1, n_a + 1)]
    orders = {a: rng.sample(names, n_t) for a in students}
    orders["a2"] = orders["a1"]
    sp = {}
    for a in students:
        acc = [rng.choice(acts[t]) for t in orders[a]]
        rest = [b for b in schools if b not in acc]
        sp[a] = acc + [OUTSIDE] + rng.sample(rest, len(rest))
    bp = {}
    for b in schools:
        # schools lean towards students who rank them low
        key = {a: -sp[a].index(b) + rng.uniform(-1, 1) for a in students}
        bp[b] = sorted(students, key=key.__getitem__) + [OUTSIDE]
    quota = {b: 1 for b in schools}
    return Instance(students, schools, quota, sp, bp), ActivityStructure(acts)


# -- two-stage markets ---------------------------------------------------------------


def rank_weights(rng, inst):
    """Non-negative weights, non-decreasing down each student's aggregate list."""
    w = {}
    for a in inst.students:
        v = Fraction(0)
        for b in inst.student_pref[a]:
            v += Fraction(rng.randint(0, 3), rng.randint(1, 2))
            w[(a, b)] = v
    return w


def random_spec(rng, inst, keep):
    a = [x for x in inst.students if rng.random() < keep]
    b = [x for x in inst.schools if rng.random() < keep]
    return SubSpec.make(a or inst.students[:1], b or inst.schools[:1])


def random_two_stage(seed, n=(3, 4), k_max=2, weights=None):
    rng = random.Random(seed)
    n_a = rng.randint(*n)
    agg = conflicted_instance(rng, n_a, n_a)
    first = SubSpec() if rng.random() < 0.5 else random_spec(rng, agg, 0.85)
    k = rng.randint(1, k_max)
    cuts = sorted(rng.sample(range(1, 6), k - 1))
    probs = [Fraction(b - a, 6) for a, b in zip([0] + cuts, cuts + [6])]
    scen = [Scenario(f"J{i + 1}", random_spec(rng, agg, 0.75), p) for i, p in enumerate(probs)]

    def costs():
        return {(a, b): Fraction(rng.randint(-2, 4)) for a in agg.students for b in agg.schools if rng.random() < 0.5}

    lam = rng.choice([Fraction(0), Fraction(1, 2), Fraction(1), Fraction(2)])
    use_w = rng.random() < 0.3 if weights is None else weights
    w = rank_weights(rng, agg) if use_w else None
    return TwoStageInstance(agg, first, tuple(scen), None, costs(), costs(), lam, w)


def check_f3(ts, u):
    part = meta_rotations(u.order, SublatticeSpec.all())
    ups = enumerate_upsets(u.order)
    for k in range(1, len(u.components)):
        for a in common_students(u, k):
            closed = f3_tables(ts, u, a, k)
            f = ObjectiveSpec.oracle(f3_direct(ts, u, a, k))
            direct = differentials(u.order, part, f)
            assert closed.base == direct.base
            assert {i: v for i, v in closed.d1.items() if v} == {i: v for i, v in direct.d1.items() if v}
            assert closed.d2 == direct.d2
            for r in ups:
                assert f_aprx(part, closed, r) == f.value(u.order.matching_of(r))
