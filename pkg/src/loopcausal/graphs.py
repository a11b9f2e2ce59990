"""Directed mixed graphs and separation criteria.

A directed mixed graph (DMG) carries ordinary directed edges plus
bidirected edges that stand for hidden confounding.  Separation is
walk-based so that it stays correct on cyclic graphs: d-separation is
decided by reachability over (node, arrowhead) states, and
sigma-separation is d-separation applied to the acyclified graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence


class GraphFormatError(ValueError):
    """Raised when a serialized graph does not match the expected schema."""


def _canonical_pair(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class DirectedMixedGraph:
    """Graph over nodes 0..n-1 with directed and bidirected edges.

    ``directed`` holds ordered pairs (j, i) meaning j -> i; ``bidirected``
    holds unordered pairs stored with the smaller index first.  Self-loops
    are not representable.
    """

    n: int
    directed: frozenset[tuple[int, int]]
    bidirected: frozenset[tuple[int, int]]

    def __init__(
        self,
        n: int,
        directed: Iterable[tuple[int, int]] = (),
        bidirected: Iterable[tuple[int, int]] = (),
    ):
        dir_edges = frozenset((int(a), int(b)) for a, b in directed)
        bid_edges = frozenset(_canonical_pair(int(a), int(b)) for a, b in bidirected)
        for a, b in dir_edges | bid_edges:
            if a == b:
                raise ValueError(f"self-loop on node {a} is not allowed")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) out of range for n={n}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "directed", dir_edges)
        object.__setattr__(self, "bidirected", bid_edges)

    @property
    def nodes(self) -> range:
        return range(self.n)

    def parents(self, v: int) -> set[int]:
        return {a for a, b in self.directed if b == v}

    def children(self, v: int) -> set[int]:
        return {b for a, b in self.directed if a == v}

    def siblings(self, v: int) -> set[int]:
        """Nodes joined to v by a bidirected edge."""
        return {a if b == v else b for a, b in self.bidirected if v in (a, b)}

    def has_directed(self, a: int, b: int) -> bool:
        return (a, b) in self.directed

    def has_bidirected(self, a: int, b: int) -> bool:
        return _canonical_pair(a, b) in self.bidirected

    def edge_count(self) -> int:
        return len(self.directed) + len(self.bidirected)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "directed": sorted([a, b] for a, b in self.directed),
            "bidirected": sorted([a, b] for a, b in self.bidirected),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DirectedMixedGraph":
        try:
            return cls(obj["n"], obj.get("directed", ()), obj.get("bidirected", ()))
        except (KeyError, TypeError) as exc:
            raise GraphFormatError(f"bad graph object: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DirectedMixedGraph":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class WalkStep:
    """One traversal of an edge, from ``tail`` to ``head`` in walk order.

    ``arrow_into_tail`` / ``arrow_into_head`` record where the edge has
    arrowheads: a directed edge traversed along its arrow has one only at
    the head, traversed against it only at the tail, and a bidirected
    edge has both.
    """

    tail: int
    head: int
    arrow_into_tail: bool
    arrow_into_head: bool

    def __post_init__(self):
        if self.tail == self.head:
            raise ValueError("walk step cannot be a self-loop")
        if not (self.arrow_into_tail or self.arrow_into_head):
            raise ValueError("an edge has at least one arrowhead")


@dataclass(frozen=True)
class Walk:
    """A sequence of steps where consecutive steps share a node.

    Edges may repeat; this is a walk, not a simple path.
    """

    steps: tuple[WalkStep, ...]

    def __init__(self, steps: Sequence[WalkStep]):
        steps = tuple(steps)
        if not steps:
            raise ValueError("a walk has at least one step")
        for prev, nxt in zip(steps, steps[1:]):
            if prev.head != nxt.tail:
                raise ValueError(
                    f"steps disagree at junction: {prev.head} != {nxt.tail}"
                )
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def start(self) -> int:
        return self.steps[0].tail

    @property
    def end(self) -> int:
        return self.steps[-1].head

    def interior_nodes(self) -> list[int]:
        return [s.head for s in self.steps[:-1]]


@dataclass(frozen=True)
class SeparationQuery:
    """Ask whether x and y are separated given the conditioning set c."""

    x: int
    y: int
    c: frozenset[int]

    def __init__(self, x: int, y: int, c: Iterable[int] = ()):
        c = frozenset(int(v) for v in c)
        if x == y:
            raise ValueError("query endpoints must differ")
        if x in c or y in c:
            raise ValueError("conditioning set must not contain the endpoints")
        object.__setattr__(self, "x", int(x))
        object.__setattr__(self, "y", int(y))
        object.__setattr__(self, "c", c)


def is_collider(walk: Walk, position: int) -> bool:
    """True iff the interior node at ``position`` has both incident
    walk edges pointing into it.

    ``position`` counts interior nodes: position p is the node shared by
    steps p and p+1, so valid positions are 0..len(walk)-2.
    """
    if not (0 <= position <= len(walk.steps) - 2):
        raise IndexError(
            f"position {position} is not an interior node of a "
            f"{len(walk.steps)}-step walk"
        )
    return walk.steps[position].arrow_into_head and walk.steps[position + 1].arrow_into_tail


def strongly_connected_components(g: DirectedMixedGraph) -> list[frozenset[int]]:
    """Partition the nodes into SCCs of the directed part (Tarjan,
    iterative).  Bidirected edges are ignored.  Components are returned
    sorted by their smallest node.
    """
    children: list[list[int]] = [[] for _ in range(g.n)]
    for a, b in sorted(g.directed):
        children[a].append(b)

    index: dict[int, int] = {}
    lowlink: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    components: list[frozenset[int]] = []
    counter = 0

    for root in g.nodes:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, child_i = work[-1]
            if child_i == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            advanced = False
            for k in range(child_i, len(children[v])):
                w = children[v][k]
                if w not in index:
                    work[-1] = (v, k + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if w in on_stack:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                components.append(frozenset(comp))
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
    return sorted(components, key=min)


def has_directed_cycle(g: DirectedMixedGraph) -> bool:
    """True iff some directed cycle exists (bidirected edges never count)."""
    return any(len(c) >= 2 for c in strongly_connected_components(g))


def intervene_graph(g: DirectedMixedGraph, j: Iterable[int]) -> DirectedMixedGraph:
    """Manipulated graph: drop every edge that carries influence or noise
    into an intervened node.

    Directed edges into members of ``j`` are removed, as are bidirected
    edges touching ``j`` (an intervened variable is cut off from its
    noise term, hence from any confounder).
    """
    j = set(j)
    if not j <= set(g.nodes):
        raise ValueError(f"intervention set {sorted(j)} not within nodes")
    directed = {(a, b) for a, b in g.directed if b not in j}
    bidirected = {(a, b) for a, b in g.bidirected if a not in j and b not in j}
    return DirectedMixedGraph(g.n, directed, bidirected)


def _adjacency(g: DirectedMixedGraph):
    out_dir: list[set[int]] = [set() for _ in range(g.n)]
    in_dir: list[set[int]] = [set() for _ in range(g.n)]
    sib: list[set[int]] = [set() for _ in range(g.n)]
    for a, b in g.directed:
        out_dir[a].add(b)
        in_dir[b].add(a)
    for a, b in g.bidirected:
        sib[a].add(b)
        sib[b].add(a)
    return out_dir, in_dir, sib


def d_separated(g: DirectedMixedGraph, q: SeparationQuery) -> bool:
    """Walk-based d-separation.

    x and y are d-connected given C iff some walk joins them on which
    every collider is in C and every non-collider is outside C.  The
    check runs as reachability over (node, arrived-with-arrowhead)
    states, so it terminates on cyclic graphs without any length bound.
    """
    if not (q.x in g.nodes and q.y in g.nodes and set(q.c) <= set(g.nodes)):
        raise ValueError("query references nodes outside the graph")
    out_dir, in_dir, sib = _adjacency(g)
    c = q.c

    # state: (node, True if the last traversed edge has an arrowhead here)
    seen: set[tuple[int, bool]] = set()
    frontier: list[tuple[int, bool]] = []

    def push(node: int, head: bool):
        if (node, head) not in seen:
            seen.add((node, head))
            frontier.append((node, head))

    # x is an endpoint: leave along any incident edge.
    for w in out_dir[q.x]:
        push(w, True)
    for w in in_dir[q.x]:
        push(w, False)
    for w in sib[q.x]:
        push(w, True)

    while frontier:
        v, head = frontier.pop()
        if v == q.y:
            return False
        # Continue the walk through v.  Leaving via a tail keeps v a
        # non-collider (needs v not in C); leaving via an arrowhead after
        # arriving at one makes v a collider (needs v in C).
        if v not in c:
            # non-collider: any exit with a tail at v
            for w in out_dir[v]:
                push(w, True)
            if not head:
                # arrived via a tail: every exit is a non-collider junction
                for w in in_dir[v]:
                    push(w, False)
                for w in sib[v]:
                    push(w, True)
        if head and v in c:
            # collider junction: exits with an arrowhead at v
            for w in in_dir[v]:
                push(w, False)
            for w in sib[v]:
                push(w, True)
    return True


def acyclify(g: DirectedMixedGraph) -> DirectedMixedGraph:
    """Collapse every directed loop into a fully interconnected cluster.

    In the result, v -> w exists iff v lies outside w's SCC and points
    into some member of it; v <-> w exists iff v and w share a non-trivial
    SCC, or their SCCs are linked by any bidirected edge.  The output is
    acyclic and equivalent to the input under sigma-separation.
    """
    comps = strongly_connected_components(g)
    comp_of = {}
    for ci, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = ci

    directed: set[tuple[int, int]] = set()
    for a, b in g.directed:
        if comp_of[a] == comp_of[b]:
            continue
        for w in comps[comp_of[b]]:
            directed.add((a, w))

    bidirected: set[tuple[int, int]] = set()
    for comp in comps:
        if len(comp) >= 2:
            members = sorted(comp)
            for i, v in enumerate(members):
                for w in members[i + 1:]:
                    bidirected.add((v, w))
    for a, b in g.bidirected:
        for v in comps[comp_of[a]]:
            for w in comps[comp_of[b]]:
                if v != w:
                    bidirected.add(_canonical_pair(v, w))
    return DirectedMixedGraph(g.n, directed, bidirected)


def sigma_separated(g: DirectedMixedGraph, q: SeparationQuery) -> bool:
    """Sigma-separation, computed as d-separation in the acyclified graph."""
    return d_separated(acyclify(g), q)
