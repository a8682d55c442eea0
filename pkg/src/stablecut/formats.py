"""Plain-text instance format with sibling, activity and scenario extensions.

    students: a1 a2 a3
    schools: b1/1 b2/2
    pref a1: b2 b1 @
    pref b1: a2 @ a1
    pair a1 a2
    activity music: b1 b2
    weight a1 b1 3/2
    lambda 1
    c1 a1 b1 2
    c2 a1 b1 2
    dissat-weight a1 b1 1
    first
    keep-students a1 a2
    scenario J1 p=1/2
    keep-students a1 a2
    keep-schools b1
    quota b1 1
    depart-prob 1/4 seed 7

Agents missing from a pref line are appended after @ in declaration order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .matching_core import OUTSIDE, Instance, InstanceError
from .siblings_apps import ActivityStructure
from .two_stage import DepartureSampler, Scenario, SubSpec, TwoStageInstance

_RAT = re.compile(r"-?\d+(/\d+)?$")
_ID = re.compile(r"[^\s:/=@#]+$")


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line, self.msg = line, msg


def fmt_rat(x) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _rat(tok: str, ln: int) -> Fraction:
    if not _RAT.match(tok):
        raise ParseError(ln, f"expected a rational p/q, got {tok!r}")
    try:
        return Fraction(tok)
    except ZeroDivisionError:
        raise ParseError(ln, "zero denominator") from None


def _int(tok: str, ln: int) -> int:
    if not re.fullmatch(r"\d+", tok):
        raise ParseError(ln, f"expected a non-negative integer, got {tok!r}")
    return int(tok)


@dataclass
class Block:
    line: int
    students: list | None = None
    schools: list | None = None
    quota: dict = field(default_factory=dict)

    def spec(self) -> SubSpec:
        return SubSpec.make(self.students, self.schools, self.quota)


@dataclass
class Document:
    inst: Instance
    pairs: list = field(default_factory=list)
    activities: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    c1: dict = field(default_factory=dict)
    c2: dict = field(default_factory=dict)
    dissat: dict = field(default_factory=dict)
    lam: Fraction | None = None
    first: SubSpec | None = None
    scenarios: list = field(default_factory=list)  # Scenario
    depart: tuple | None = None  # (p, seed)

    def activity_structure(self) -> ActivityStructure:
        return ActivityStructure(self.activities)

    def two_stage(self) -> TwoStageInstance:
        sampler = DepartureSampler(self.depart[0]) if self.depart else None
        return TwoStageInstance(
            self.inst,
            self.first or SubSpec(),
            tuple(self.scenarios),
            sampler,
            self.c1,
            self.c2,
            Fraction(1) if self.lam is None else self.lam,
            self.dissat or None,
        )


def _split(raw: str) -> list:
    return raw.split("#", 1)[0].split()


def parse(text: str, aggregate: Instance | None = None) -> Document:
    """Parse a full document, or a scenario-only fragment when aggregate is given."""
    lines = text.splitlines()
    students = schools = None
    quota = {}
    prefs = {}
    header_line = {}
    doc_rest = []
    for ln, raw in enumerate(lines, 1):
        toks = _split(raw)
        if not toks:
            continue
        head = toks[0]
        if head in ("students:", "schools:"):
            if aggregate is not None:
                raise ParseError(ln, "fragment may not redeclare agents")
            if head in header_line:
                raise ParseError(ln, f"duplicate {head[:-1]} header")
            header_line[head] = ln
            ids = []
            for t in toks[1:]:
                if head == "schools:":
                    name, sep, q = t.rpartition("/")
                    if not sep:
                        raise ParseError(ln, f"school {t!r} needs an id/quota form")
                    qv = _int(q, ln)
                    if qv < 1:
                        raise ParseError(ln, f"quota of {name} must be positive")
                    t = name
                    quota[t] = qv
                if not _ID.match(t):
                    raise ParseError(ln, f"invalid id {t!r}")
                if t in ids:
                    raise ParseError(ln, f"duplicate id {t}")
                ids.append(t)
            if head == "students:":
                students = ids
            else:
                schools = ids
        elif head == "pref":
            if aggregate is not None:
                raise ParseError(ln, "fragment may not restate preferences")
            if len(toks) < 2 or not toks[1].endswith(":"):
                raise ParseError(ln, "expected 'pref <agent>: ...'")
            agent = toks[1][:-1]
            if agent in prefs:
                raise ParseError(ln, f"duplicate pref line for {agent}")
            prefs[agent] = (ln, toks[2:])
        else:
            doc_rest.append((ln, toks))

    last = len(lines)
    if aggregate is None:
        if students is None or schools is None:
            raise ParseError(last, "missing students: or schools: header")
        sset, bset = set(students), set(schools)
        if sset & bset:
            raise ParseError(header_line["schools:"], f"id used on both sides: {sorted(sset & bset)[0]}")
        sp, bp = {}, {}
        for agent, (ln, toks) in prefs.items():
            if agent in sset:
                other, dst = schools, sp
            elif agent in bset:
                other, dst = students, bp
            else:
                raise ParseError(ln, f"unknown agent {agent}")
            known = set(other)
            seen = []
            for t in toks:
                if t != OUTSIDE and t not in known:
                    raise ParseError(ln, f"unknown id {t} in preferences of {agent}")
                if t in seen:
                    raise ParseError(ln, f"duplicate {t} in preferences of {agent}")
                seen.append(t)
            if OUTSIDE not in seen:
                raise ParseError(ln, f"missing outside marker {OUTSIDE} for {agent}")
            dst[agent] = seen + [x for x in other if x not in seen]
        for agent in students + schools:
            if agent not in prefs:
                raise ParseError(last, f"missing pref line for {agent}")
        try:
            inst = Instance(students, schools, quota, sp, bp)
        except InstanceError as e:
            raise ParseError(header_line["schools:"], str(e)) from None
    else:
        inst = aggregate
    doc = Document(inst)
    _parse_rest(doc, doc_rest)
    return doc


def _parse_rest(doc: Document, rest):
    inst = doc.inst
    sset, bset = set(inst.students), set(inst.schools)
    block = None
    first = None
    scen = []  # (name, p, Block)

    def need(ln, toks, n):
        if len(toks) != n:
            raise ParseError(ln, f"{toks[0]} expects {n - 1} arguments")

    def student(ln, t):
        if t not in sset:
            raise ParseError(ln, f"unknown student {t}")
        return t

    def school(ln, t, outside=False):
        if t == OUTSIDE and outside:
            return t
        if t not in bset:
            raise ParseError(ln, f"unknown school {t}")
        return t

    def pair_value(ln, toks, dst):
        need(ln, toks, 4)
        key = (student(ln, toks[1]), school(ln, toks[2], outside=True))
        if key in dst:
            raise ParseError(ln, f"duplicate {toks[0]} for {toks[1]} {toks[2]}")
        dst[key] = _rat(toks[3], ln)

    for ln, toks in rest:
        head = toks[0]
        if head == "pair":
            need(ln, toks, 3)
            a, abar = student(ln, toks[1]), student(ln, toks[2])
            if a == abar:
                raise ParseError(ln, "a sibling pair needs two students")
            doc.pairs.append((a, abar))
        elif head == "activity":
            if len(toks) < 2 or not toks[1].endswith(":"):
                raise ParseError(ln, "expected 'activity NAME: classes ...'")
            name = toks[1][:-1]
            if name in doc.activities:
                raise ParseError(ln, f"duplicate activity {name}")
            doc.activities[name] = [school(ln, t) for t in toks[2:]]
        elif head == "weight":
            pair_value(ln, toks, doc.weights)
        elif head == "c1":
            pair_value(ln, toks, doc.c1)
        elif head == "c2":
            pair_value(ln, toks, doc.c2)
        elif head == "dissat-weight":
            pair_value(ln, toks, doc.dissat)
        elif head == "lambda":
            need(ln, toks, 2)
            if doc.lam is not None:
                raise ParseError(ln, "duplicate lambda")
            doc.lam = _rat(toks[1], ln)
            if doc.lam < 0:
                raise ParseError(ln, "lambda must be non-negative")
        elif head == "first":
            need(ln, toks, 1)
            if first is not None:
                raise ParseError(ln, "duplicate first block")
            block = first = Block(ln)
        elif head == "scenario":
            if len(toks) != 3 or not toks[2].startswith("p="):
                raise ParseError(ln, "expected 'scenario NAME p=RATIONAL'")
            name = toks[1]
            if any(n == name for n, _, _ in scen):
                raise ParseError(ln, f"duplicate scenario {name}")
            p = _rat(toks[2][2:], ln)
            if not 0 <= p <= 1:
                raise ParseError(ln, "probability must lie in [0, 1]")
            block = Block(ln)
            scen.append((name, p, block))
        elif head in ("keep-students", "keep-schools"):
            if block is None:
                raise ParseError(ln, f"{head} outside a first/scenario block")
            attr = "students" if head == "keep-students" else "schools"
            if getattr(block, attr) is not None:
                raise ParseError(ln, f"duplicate {head} in block")
            check = student if attr == "students" else school
            setattr(block, attr, [check(ln, t) for t in toks[1:]])
        elif head == "quota":
            need(ln, toks, 3)
            if block is None:
                raise ParseError(ln, "quota outside a first/scenario block")
            b = school(ln, toks[1])
            q = _int(toks[2], ln)
            if q < 1:
                raise ParseError(ln, "quota must be positive")
            block.quota[b] = q
        elif head == "depart-prob":
            if len(toks) != 4 or toks[2] != "seed":
                raise ParseError(ln, "expected 'depart-prob P seed S'")
            if doc.depart is not None:
                raise ParseError(ln, "duplicate depart-prob")
            p = _rat(toks[1], ln)
            if not 0 <= p <= 1:
                raise ParseError(ln, "departure probability must lie in [0, 1]")
            doc.depart = (p, _int(toks[3], ln))
        else:
            raise ParseError(ln, f"unknown directive {head!r}")

    for blk in [first] + [b for _, _, b in scen]:
        if blk is None:
            continue
        kept = set(inst.schools if blk.schools is None else blk.schools)
        for b, q in blk.quota.items():
            if b not in kept:
                raise ParseError(blk.line, f"quota override for removed school {b}")
    if first is not None:
        doc.first = first.spec()
    doc.scenarios = [Scenario(n, b.spec(), p) for n, p, b in scen]
    if scen and sum(p for _, p, _ in scen) != 1:
        raise ParseError(scen[-1][2].line, "scenario probabilities must sum to 1")


def parse_instance(text: str) -> Instance:
    return parse(text).inst


def _block_lines(spec: SubSpec, inst: Instance) -> list:
    out = []
    if spec.students is not None:
        out.append(" ".join(["keep-students"] + [a for a in inst.students if a in spec.students]))
    if spec.schools is not None:
        out.append(" ".join(["keep-schools"] + [b for b in inst.schools if b in spec.schools]))
    for b, q in spec.quota:
        out.append(f"quota {b} {q}")
    return out


def _pair_lines(tag: str, values: dict, inst: Instance) -> list:
    si = {a: i for i, a in enumerate(inst.students)}
    bi = {b: i for i, b in enumerate(inst.schools)}
    bi[OUTSIDE] = len(bi)
    keys = sorted(values, key=lambda k: (si[k[0]], bi[k[1]]))
    return [f"{tag} {a} {b} {fmt_rat(values[(a, b)])}" for a, b in keys]


def serialize(doc: Document | Instance) -> str:
    """Canonical text: full preference orders, fixed directive order."""
    if isinstance(doc, Instance):
        doc = Document(doc)
    inst = doc.inst
    out = [
        "students: " + " ".join(inst.students),
        "schools: " + " ".join(f"{b}/{inst.quota[b]}" for b in inst.schools),
    ]
    for a in inst.students:
        out.append(f"pref {a}: " + " ".join(inst.student_pref[a]))
    for b in inst.schools:
        out.append(f"pref {b}: " + " ".join(inst.school_pref[b]))
    out += [f"pair {a} {abar}" for a, abar in doc.pairs]
    out += [f"activity {n}: " + " ".join(cs) for n, cs in doc.activities.items()]
    out += _pair_lines("weight", doc.weights, inst)
    if doc.lam is not None:
        out.append(f"lambda {fmt_rat(doc.lam)}")
    out += _pair_lines("c1", doc.c1, inst)
    out += _pair_lines("c2", doc.c2, inst)
    out += _pair_lines("dissat-weight", doc.dissat, inst)
    if doc.first is not None:
        out.append("first")
        out += _block_lines(doc.first, inst)
    for s in doc.scenarios:
        out.append(f"scenario {s.name} p={fmt_rat(s.p)}")
        out += _block_lines(s.spec, inst)
    if doc.depart is not None:
        out.append(f"depart-prob {fmt_rat(doc.depart[0])} seed {doc.depart[1]}")
    return "\n".join(out) + "\n"


def format_matching(m) -> str:
    return " ".join(f"{a}:{b}" for a, b in m.items())
