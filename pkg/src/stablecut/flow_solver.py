"""Exact max-flow / min-cut with rational and infinite capacities.

Capacities are Fractions (or INF). The solver scales every finite capacity
to an integer by the lcm of denominators, replaces INF by a big-M larger
than the sum of all finite capacities, and runs Dinic's algorithm on
Python integers, so the arithmetic stays exact.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

SOURCE = "s"
SINK = "t"


class _Infinity:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "inf"

    __str__ = __repr__

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("stablecut-inf")

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()


class FlowError(ValueError):
    pass


def is_inf(x) -> bool:
    return x is INF


def add_cap(x, y):
    if x is INF or y is INF:
        return INF
    return x + y


def _check_cap(c):
    if c is INF:
        return c
    c = Fraction(c)
    if c < 0:
        raise FlowError(f"negative capacity {c}")
    return c


@dataclass(frozen=True)
class FlowNetwork:
    arcs: tuple  # (tail, head, capacity)
    extra_vertices: frozenset = field(default=frozenset())

    def __post_init__(self):
        arcs = []
        for u, v, c in self.arcs:
            if v == SOURCE:
                raise FlowError("arc into the source")
            if u == SINK:
                raise FlowError("arc out of the sink")
            arcs.append((u, v, _check_cap(c)))
        object.__setattr__(self, "arcs", tuple(arcs))

    @property
    def vertices(self) -> frozenset:
        vs = {SOURCE, SINK} | set(self.extra_vertices)
        for u, v, _ in self.arcs:
            vs.add(u)
            vs.add(v)
        return frozenset(vs)

    def arc_map(self) -> dict:
        return {(u, v): c for u, v, c in merge_parallel_arcs(self).arcs}


def _vkey(x):
    return (0, x) if isinstance(x, int) else (1, str(x))


def merge_parallel_arcs(net: FlowNetwork, prune_zero: bool = False) -> FlowNetwork:
    merged = {}
    for u, v, c in net.arcs:
        merged[(u, v)] = add_cap(merged.get((u, v), Fraction(0)), c)
    arcs = [
        (u, v, c)
        for (u, v), c in sorted(merged.items(), key=lambda kv: (_vkey(kv[0][0]), _vkey(kv[0][1])))
        if not (prune_zero and c is not INF and c == 0)
    ]
    return FlowNetwork(tuple(arcs), net.extra_vertices | net.vertices)


def cut_value(net: FlowNetwork, source_side) -> object:
    """Total capacity of arcs leaving source_side (INF if any is infinite)."""
    side = set(source_side)
    if SOURCE not in side or SINK in side:
        raise FlowError("source side must contain s and not t")
    total = Fraction(0)
    for u, v, c in net.arcs:
        if u in side and v not in side:
            total = add_cap(total, c)
    return total


@dataclass(frozen=True)
class CutResult:
    value: object  # Fraction or INF
    source_side: frozenset
    flow: dict  # (tail, head) -> Fraction, on merged arcs


def solve_min_cut(net: FlowNetwork) -> CutResult:
    net = merge_parallel_arcs(net)
    verts = sorted(net.vertices, key=_vkey)
    idx = {v: i for i, v in enumerate(verts)}
    finite = [c for _, _, c in net.arcs if c is not INF]
    scale = 1
    for c in finite:
        scale = scale * c.denominator // math.gcd(scale, c.denominator)
    big = 1 + sum(int(c * scale) for c in finite)

    n = len(verts)
    head, cap, adj = [], [], [[] for _ in range(n)]
    arc_edge = []
    for u, v, c in net.arcs:
        iu, iv = idx[u], idx[v]
        k = int(c * scale) if c is not INF else big
        adj[iu].append(len(head))
        arc_edge.append(len(head))
        head.append(iv)
        cap.append(k)
        adj[iv].append(len(head))
        head.append(iu)
        cap.append(0)
    orig = list(cap)
    s, t = idx[SOURCE], idx[SINK]

    flow_total = 0
    while True:
        level = [-1] * n
        level[s] = 0
        q = deque([s])
        while q:
            x = q.popleft()
            for e in adj[x]:
                if cap[e] > 0 and level[head[e]] < 0:
                    level[head[e]] = level[x] + 1
                    q.append(head[e])
        if level[t] < 0:
            break
        it = [0] * n
        while True:
            pushed = _augment(s, t, adj, head, cap, level, it)
            if pushed == 0:
                break
            flow_total += pushed

    seen = {s}
    q = deque([s])
    while q:
        x = q.popleft()
        for e in adj[x]:
            if cap[e] > 0 and head[e] not in seen:
                seen.add(head[e])
                q.append(head[e])
    side = frozenset(verts[i] for i in seen)
    value = INF if flow_total >= big else Fraction(flow_total, scale)
    flows = {}
    for (u, v, _), e in zip(net.arcs, arc_edge):
        flows[(u, v)] = Fraction(orig[e] - cap[e], scale)
    return CutResult(value, side, flows)


def _augment(s, t, adj, head, cap, level, it):
    """One augmenting path in the level graph (iterative DFS)."""
    stack, edges = [s], []
    while stack:
        x = stack[-1]
        if x == t:
            f = min(cap[e] for e in edges)
            for e in edges:
                cap[e] -= f
                cap[e ^ 1] += f
            return f
        advanced = False
        while it[x] < len(adj[x]):
            e = adj[x][it[x]]
            y = head[e]
            if cap[e] > 0 and level[y] == level[x] + 1:
                stack.append(y)
                edges.append(e)
                advanced = True
                break
            it[x] += 1
        if not advanced:
            level[x] = -1  # dead end
            stack.pop()
            if edges:
                edges.pop()
                it[stack[-1]] += 1
    return 0
