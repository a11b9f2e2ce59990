"""Shared helpers: random graph generators and a brute-force
separation oracle that enumerates bounded-length open walks directly
from the walk definition, independently of the library's reachability
implementation."""

from __future__ import annotations

import numpy as np

from loopcausal.graphs import DirectedMixedGraph


def random_dmg(rng: np.random.Generator, n: int, p_dir=0.25, p_bid=0.15) -> DirectedMixedGraph:
    directed = [
        (a, b)
        for a in range(n)
        for b in range(n)
        if a != b and rng.random() < p_dir
    ]
    bidirected = [
        (a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p_bid
    ]
    return DirectedMixedGraph(n, directed, bidirected)


def random_acyclic_dmg(rng: np.random.Generator, n: int, p_dir=0.3, p_bid=0.2) -> DirectedMixedGraph:
    order = rng.permutation(n)
    rank = {int(v): k for k, v in enumerate(order)}
    directed = [
        (a, b)
        for a in range(n)
        for b in range(n)
        if a != b and rank[a] < rank[b] and rng.random() < p_dir
    ]
    bidirected = [
        (a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p_bid
    ]
    return DirectedMixedGraph(n, directed, bidirected)


def walk_oracle_connected(
    g: DirectedMixedGraph, x: int, y: int, c, max_len: int = 16
) -> bool:
    """Enumerate all open walks of length <= max_len layer by layer.

    A step is (next node, arrowhead at the current node, arrowhead at
    the next node); an interior node is a collider iff both incident
    steps put an arrowhead on it, and a walk is open iff its colliders
    are all in c and its non-colliders all outside c.
    """
    c = set(c)
    steps = {v: [] for v in range(g.n)}
    for a, b in g.directed:
        steps[a].append((b, False, True))
        steps[b].append((a, True, False))
    for a, b in g.bidirected:
        steps[a].append((b, True, True))
        steps[b].append((a, True, True))

    # frontier of walk endpoints: (node, arrowhead on the last step's end)
    frontier = set()
    for w, head_at_x, head_at_w in steps[x]:
        if w == y:
            return True
        frontier.add((w, head_at_w))
    for _ in range(max_len - 1):
        nxt = set()
        for v, arrived_head in frontier:
            for w, head_at_v, head_at_w in steps[v]:
                is_collider = arrived_head and head_at_v
                if is_collider != (v in c):
                    continue
                if w == y:
                    return True
                nxt.add((w, head_at_w))
        if nxt <= frontier:
            break
        frontier |= nxt
    return False
