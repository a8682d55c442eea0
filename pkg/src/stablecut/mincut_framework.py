"""Meta-rotations, differentials, cut digraphs and representability checks.

An objective f over a sublattice F of stable matchings is turned into a
capacitated digraph on the rotations whose finite s-t cuts {s} ∪ R are the
upsets R with M_R in F, with cut value f(M_R) + constant.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Callable, Mapping

from .flow_solver import INF, SINK, SOURCE, FlowNetwork, cut_value, merge_parallel_arcs, solve_min_cut
from .matching_core import LimitExceeded, Matching
from .rotation_lattice import RotationOrder, enumerate_upsets

ZERO = Fraction(0)
HALF = Fraction(1, 2)


class NotRepresentable(ValueError):
    """Carries a certificate: condition 'i', 'ii' or 'iii' plus witnesses."""

    def __init__(self, condition: str, witness, message: str = ""):
        super().__init__(message or f"condition ({condition}) fails: {witness}")
        self.condition = condition
        self.witness = witness


class GammaTooSmall(ValueError):
    pass


# -- feasible sets ---------------------------------------------------------


@dataclass(frozen=True)
class SublatticeSpec:
    mode: str  # ALL | EXPLICIT | STRUCTURED
    matchings: tuple = ()
    predicate: Callable | None = None

    @classmethod
    def all(cls):
        return cls("ALL")

    @classmethod
    def explicit(cls, matchings):
        return cls("EXPLICIT", tuple(dict.fromkeys(matchings)))

    @classmethod
    def structured(cls, predicate: Callable[[Matching], bool]):
        return cls("STRUCTURED", predicate=predicate)


def _family_upsets(order: RotationOrder, F: SublatticeSpec, limit: int) -> list:
    if F.mode == "EXPLICIT":
        return [order.upset_of(m) for m in F.matchings]
    ups = enumerate_upsets(order, limit)
    if F.mode == "STRUCTURED":
        ups = [r for r in ups if F.predicate(order.matching_of(r, check=False))]
    return ups


def check_sublattice(order: RotationOrder, ups: list) -> None:
    """Raises NotRepresentable('i') with the offending pair if not closed."""
    if not ups:
        raise NotRepresentable("i", None, "feasible family is empty")
    present = set(ups)
    for r1, r2 in combinations(ups, 2):
        for op, r in (("join", r1 & r2), ("meet", r1 | r2)):
            if r not in present:
                m1, m2 = order.matching_of(r1), order.matching_of(r2)
                raise NotRepresentable(
                    "i",
                    {"m1": m1, "m2": m2, "op": op, "result": order.matching_of(r)},
                    f"{op} of {m1} and {m2} is {order.matching_of(r)}, not in F",
                )


@dataclass(eq=False)
class MetaRotationPartition:
    theta0: frozenset
    thetaz: frozenset
    proper: list  # list of frozensets of rotation ids, sorted by representative
    above: dict  # class index -> frozenset of class indices ⊵F it (incl. itself)
    family: list | None = None  # upsets of F when known

    def __post_init__(self):
        self.rep = [min(c) for c in self.proper]
        k = len(self.proper)
        self.hasse = []
        for i in range(k):
            strict = self.above[i] - {i}
            for j in strict:
                if not any(j in self.above[m] for m in strict if m != j):
                    self.hasse.append((j, i))
        self.hasse.sort()

    def __len__(self):
        return len(self.proper)

    def geq(self, i, j) -> bool:
        return i in self.above[j]

    def upper(self, i) -> frozenset:
        """R^θ: θ0 plus every proper class ⊵F θ."""
        out = set(self.theta0)
        for j in self.above[i]:
            out |= self.proper[j]
        return frozenset(out)

    def lower(self, i) -> frozenset:
        """R_θ: R^θ without θ itself."""
        return self.upper(i) - self.proper[i]

    def classes_in(self, r) -> list:
        """Θ_M for the upset r."""
        r = set(r)
        return [i for i, c in enumerate(self.proper) if c <= r]

    def upset_from_classes(self, idx) -> frozenset:
        out = set(self.theta0)
        for i in idx:
            out |= self.proper[i]
        return frozenset(out)


def meta_rotations(order: RotationOrder, F: SublatticeSpec, limit: int = 10**6) -> MetaRotationPartition:
    n = len(order)
    if F.mode == "ALL":
        return MetaRotationPartition(
            frozenset(), frozenset(), [frozenset({i}) for i in range(n)],
            {i: frozenset(order.above[i]) for i in range(n)},
        )
    ups = list(dict.fromkeys(_family_upsets(order, F, limit)))
    check_sublattice(order, ups)
    sig = {i: tuple(i in r for r in ups) for i in range(n)}
    groups = {}
    theta0, thetaz = set(), set()
    for i in range(n):
        s = sig[i]
        if all(s):
            theta0.add(i)
        elif not any(s):
            thetaz.add(i)
        else:
            groups.setdefault(s, set()).add(i)
    classes = sorted((frozenset(g) for g in groups.values()), key=min)
    csig = [sig[min(c)] for c in classes]
    above = {}
    for j in range(len(classes)):
        # θ_i ⊵F θ_j iff every member of F containing θ_j contains θ_i
        above[j] = frozenset(
            i for i in range(len(classes)) if all(x or not y for x, y in zip(csig[i], csig[j]))
        )
    return MetaRotationPartition(frozenset(theta0), frozenset(thetaz), classes, above, ups)


# -- objectives --------------------------------------------------------------


@dataclass(frozen=True)
class Tables:
    """Differential tables over proper classes (by index)."""

    base: Fraction  # f(M0^F)
    d1: dict  # i -> ∂f
    d2: dict = field(default_factory=dict)  # (i, j) -> ∂²f, i != j, sparse, symmetric

    def second(self, i, j) -> Fraction:
        return self.d2.get((i, j), ZERO)


@dataclass(frozen=True)
class ObjectiveSpec:
    mode: str  # ORACLE | LINEAR | STRUCTURED
    evaluator: Callable | None = None
    weights: Mapping | None = None
    tables: Tables | None = None

    @classmethod
    def oracle(cls, f: Callable[[Matching], Fraction]):
        return cls("ORACLE", evaluator=f)

    @classmethod
    def linear(cls, weights: Mapping):
        return cls("LINEAR", weights={k: Fraction(v) for k, v in weights.items()})

    @classmethod
    def structured(cls, tables: Tables):
        return cls("STRUCTURED", tables=tables)

    def value(self, m: Matching) -> Fraction:
        if self.mode == "ORACLE":
            return Fraction(self.evaluator(m))
        if self.mode == "LINEAR":
            w = self.weights
            return sum((w.get((a, b), ZERO) for a, b in m.items()), ZERO)
        raise ValueError("structured objectives have no evaluator")


def linear_value(weights: Mapping, m: Matching) -> Fraction:
    return sum((weights.get((a, b), ZERO) for a, b in m.items()), ZERO)


class _Memo:
    def __init__(self, order, f: ObjectiveSpec):
        self.order, self.f, self.cache = order, f, {}

    def __call__(self, r) -> Fraction:
        r = frozenset(r)
        v = self.cache.get(r)
        if v is None:
            v = self.f.value(self.order.matching_of(r, check=False))
            self.cache[r] = v
        return v


def differentials(order: RotationOrder, part: MetaRotationPartition, f: ObjectiveSpec, direct: bool = False) -> Tables:
    """∂f and ∂²f for every proper class.

    LINEAR objectives use the closed form (telescoping over the class's
    rotations) unless direct=True; ORACLE objectives are evaluated on the
    matchings M^θ, M_θ and their meets, memoised per upset.
    """
    if f.mode == "STRUCTURED":
        return f.tables
    k = len(part)
    base_up = part.theta0
    if f.mode == "LINEAR" and not direct:
        w = f.weights
        d1 = {}
        for i, cls in enumerate(part.proper):
            s = ZERO
            for rid in cls:
                rho = order.rotations[rid]
                s += sum((w.get(p, ZERO) for p in rho.minus), ZERO)
                s -= sum((w.get(p, ZERO) for p in rho.plus), ZERO)
            d1[i] = s
        return Tables(f.value(order.matching_of(base_up, check=False)), d1, {})
    ev = _Memo(order, f)
    up = [part.upper(i) for i in range(k)]
    lo = [part.lower(i) for i in range(k)]
    d1 = {i: ev(up[i]) - ev(lo[i]) for i in range(k)}
    d2 = {}
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            v = ev(up[i] | lo[j]) + ev(lo[i] | up[j]) - ev(lo[i] | lo[j]) - ev(up[i] | up[j])
            if v != 0:
                d2[(i, j)] = v
    return Tables(ev(base_up), d1, d2)


def f_aprx(part: MetaRotationPartition, tables: Tables, r) -> Fraction:
    """f(M0^F) + Σ ∂f − ½ Σ_{θ≠θ'} ∂²f over the classes contained in r."""
    idx = part.classes_in(r)
    s = tables.base + sum((tables.d1.get(i, ZERO) for i in idx), ZERO)
    inside = set(idx)
    for (i, j), v in tables.d2.items():
        if i in inside and j in inside:
            s -= HALF * v
    return s


def is_linearizable(tables: Tables) -> tuple[bool, tuple | None]:
    for pair, v in sorted(tables.d2.items()):
        if v != 0:
            return False, pair
    return True, None


# -- cut digraph -------------------------------------------------------------


@dataclass(eq=False)
class CutDigraphBundle:
    network: FlowNetwork
    gamma: Fraction
    constant: Fraction
    theta_of_vertex: dict
    order: RotationOrder | None = field(default=None, repr=False)
    partition: MetaRotationPartition | None = field(default=None, repr=False)

    def cut(self, rotation_ids) -> object:
        return cut_value(self.network, {SOURCE} | set(rotation_ids))

    def value_of(self, rotation_ids):
        """f(M_R) for a finite cut, INF otherwise."""
        c = self.cut(rotation_ids)
        return c if c is INF else c - self.constant


def skeleton_arcs(order: RotationOrder, part: MetaRotationPartition) -> list:
    """WMR cliques, BPMR ∞ arcs on covers of ⊵F, and the s/t anchors."""
    arcs = []
    for cls in [part.theta0, part.thetaz, *part.proper]:
        for u in sorted(cls):
            for v in sorted(cls):
                if u != v:
                    arcs.append((u, v, INF))
    for upper, lower in part.hasse:
        arcs.append((part.rep[lower], part.rep[upper], INF))
    if part.theta0:
        arcs.append((SOURCE, min(part.theta0), INF))
    if part.thetaz:
        arcs.append((min(part.thetaz), SINK, INF))
    return arcs


def build_cut_digraph(order: RotationOrder, part: MetaRotationPartition, tables: Tables, gamma=None) -> CutDigraphBundle:
    for (i, j), v in sorted(tables.d2.items()):
        if v < 0:
            raise NotRepresentable("ii", (i, j, v), f"second differential {v} < 0 on classes {i}, {j}")
    k = len(part)
    half_sum = {i: ZERO for i in range(k)}
    for (i, j), v in tables.d2.items():
        half_sum[i] += HALF * v
    net_t = {i: tables.d1.get(i, ZERO) - half_sum[i] for i in range(k)}
    need = max([ZERO] + [-x for x in net_t.values()])
    if gamma is None:
        gamma = need
    gamma = Fraction(gamma)
    if gamma < need:
        raise GammaTooSmall(f"gamma must be at least {need}")
    arcs = skeleton_arcs(order, part)
    for (i, j), v in sorted(tables.d2.items()):
        if v:
            arcs.append((part.rep[i], part.rep[j], HALF * v))
    for i in range(k):
        r = part.rep[i]
        if net_t[i] + gamma:
            arcs.append((r, SINK, net_t[i] + gamma))
        if gamma:
            arcs.append((SOURCE, r, gamma))
    theta_of = {}
    for i, cls in enumerate(part.proper):
        for v in cls:
            theta_of[v] = i
    for v in part.theta0:
        theta_of[v] = "theta0"
    for v in part.thetaz:
        theta_of[v] = "thetaz"
    net = FlowNetwork(tuple(arcs), frozenset(range(len(order))))
    return CutDigraphBundle(net, gamma, -tables.base + gamma * k, theta_of, order, part)


def conic_combine(bundles: list, coeffs: list) -> CutDigraphBundle:
    if len(bundles) != len(coeffs) or not bundles:
        raise ValueError("need one coefficient per bundle")
    first = bundles[0]
    for b in bundles[1:]:
        if b.order is not first.order:
            raise ValueError("bundles are over different instances")
    arcs, const, gamma = [], ZERO, ZERO
    for b, lam in zip(bundles, coeffs):
        lam = Fraction(lam)
        if lam < 0:
            raise ValueError("negative coefficient")
        for u, v, c in b.network.arcs:
            # ∞ arcs encode F and are shared by every bundle
            if c is INF:
                arcs.append((u, v, INF))
            elif lam * c:
                arcs.append((u, v, lam * c))
        const += lam * b.constant
        gamma += lam * b.gamma
    verts = frozenset().union(*(b.network.vertices for b in bundles))
    net = merge_parallel_arcs(FlowNetwork(tuple(arcs), verts))
    return CutDigraphBundle(net, gamma, const, first.theta_of_vertex, first.order, first.partition)


def minimize_bundle(bundle: CutDigraphBundle) -> tuple:
    res = solve_min_cut(bundle.network)
    if res.value is INF:
        raise NotRepresentable("i", None, "no finite cut: feasible family is empty")
    r = frozenset(v for v in res.source_side if isinstance(v, int))
    m = bundle.order.matching_of(r)
    return m, res.value - bundle.constant, r


def minimize(order: RotationOrder, F: SublatticeSpec, f: ObjectiveSpec, gamma=None) -> tuple:
    """(matching, value) of the ⊵-least optimal upset."""
    part = meta_rotations(order, F)
    tables = differentials(order, part, f)
    bundle = build_cut_digraph(order, part, tables, gamma)
    m, val, _ = minimize_bundle(bundle)
    return m, val


# -- certification -----------------------------------------------------------


@dataclass
class Verdict:
    status: str  # REPRESENTABLE | NOT_REPRESENTABLE | CONSISTENT
    condition: str | None = None
    witness: object = None
    bundle: CutDigraphBundle | None = None
    tables: Tables | None = None
    downgraded: bool = False
    checked: int = 0
    minima_closed: bool | None = None

    def record(self) -> dict:
        """Plain dict for machine-readable output."""
        w = self.witness
        if isinstance(w, dict):
            w = {k: (str(v) if not isinstance(v, (int, str)) else v) for k, v in w.items()}
        elif w is not None:
            w = [str(x) for x in w] if isinstance(w, tuple) else str(w)
        return {
            "status": self.status,
            "condition": self.condition,
            "witness": w,
            "downgraded": self.downgraded,
            "checked": self.checked,
            "minima_sublattice": self.minima_closed,
        }


def minima_form_sublattice(order: RotationOrder, ups: list, values: dict) -> tuple[bool, tuple | None]:
    """Necessary condition: argmin of f over F is closed under meet and join."""
    best = min(values.values())
    arg = [r for r in ups if values[r] == best]
    present = set(arg)
    for r1, r2 in combinations(arg, 2):
        if (r1 & r2) not in present or (r1 | r2) not in present:
            return False, (order.matching_of(r1), order.matching_of(r2))
    return True, None


def check_representability(
    order: RotationOrder,
    F: SublatticeSpec,
    f: ObjectiveSpec,
    mode: str = "exact",
    samples: int = 200,
    seed: int = 0,
    limit: int = 10**6,
) -> Verdict:
    try:
        part = meta_rotations(order, F, limit)
    except NotRepresentable as e:
        return Verdict("NOT_REPRESENTABLE", e.condition, e.witness)
    except LimitExceeded:
        return Verdict("CONSISTENT", None, "feasible family too large to validate", downgraded=True)
    tables = differentials(order, part, f)
    neg = sorted((p, v) for p, v in tables.d2.items() if v < 0)
    if neg:
        (i, j), v = neg[0]
        w = (sorted(part.proper[i]), sorted(part.proper[j]), v)
        return Verdict("NOT_REPRESENTABLE", "ii", w, tables=tables)
    if f.mode == "STRUCTURED":
        bundle = build_cut_digraph(order, part, tables)
        return Verdict("REPRESENTABLE", bundle=bundle, tables=tables)

    downgraded = False
    if mode == "exact":
        if part.family is not None:
            ups = part.family
        else:
            try:
                ups = enumerate_upsets(order, limit)
            except LimitExceeded:
                downgraded, mode = True, "sampled"
    if mode != "exact":
        ups = _sample_family(order, part, samples, seed)
    values = {r: f.value(order.matching_of(r, check=False)) for r in ups}
    minima_closed = None
    if mode == "exact":
        minima_closed, pair = minima_form_sublattice(order, ups, values)
        if not minima_closed:
            return Verdict("NOT_REPRESENTABLE", "minima", pair, tables=tables, checked=len(ups), minima_closed=False)
    for r in ups:
        approx = f_aprx(part, tables, r)
        if approx != values[r]:
            m = order.matching_of(r)
            return Verdict(
                "NOT_REPRESENTABLE", "iii", {"matching": m, "f": values[r], "f_aprx": approx},
                tables=tables, checked=len(ups), minima_closed=minima_closed,
            )
    bundle = build_cut_digraph(order, part, tables)
    status = "REPRESENTABLE" if mode == "exact" else "CONSISTENT"
    return Verdict(status, bundle=bundle, tables=tables, downgraded=downgraded, checked=len(ups), minima_closed=minima_closed)


def _sample_family(order, part, k, seed) -> list:
    """Random upsets of F: random ⊵F-upper-closed class families."""
    rng = random.Random(seed)
    n = len(part)
    out = set()
    for _ in range(k):
        chosen = set()
        for i in rng.sample(range(n), n):
            if rng.random() < 0.5:
                chosen |= part.above[i]
        out.add(part.upset_from_classes(chosen))
    return sorted(out, key=lambda r: (len(r), sorted(r)))
