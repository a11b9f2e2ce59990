"""Constraint-loss minimization over directed mixed graphs.

The discoverer scores a candidate graph by the total weight of the
(in)dependence constraints it fails to entail, and searches the
feature space (every directed edge, every bidirected edge) for a
minimizer.  At benchmark scale the search is an exact branch and bound
whose pruning rests on two monotonicity facts: adding edges never
separates a query, removing edges never connects one.  An annealing
fallback takes over when the exact budget runs out and flags its result
as uncertified.

Graphs are packed into integer bitmasks and separation queries run as
bitset reachability, because the search evaluates millions of them.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .citest import (
    ConstraintSet,
    enumerate_constraints,
    oracle_constraints,
)
from .features import Feature, FeatureScoreTable, feature_space
from .graphs import DirectedMixedGraph
from .scm import Dataset, Experiment, LinearScm

D_SEP = "d_sep"
SIGMA_SEP = "sigma_sep"

_EPS = 1e-12


@dataclass(frozen=True)
class SearchConfig:
    mode: str = D_SEP
    exact_node_limit: int = 5
    time_budget_s: float | None = 60.0
    node_budget: int = 400_000
    anneal_steps: int = 200_000
    anneal_t0: float = 2.0
    anneal_t_end: float = 1e-3
    alpha_asp: float = 0.05
    t_asp: float = 0.0

    def __post_init__(self):
        if self.mode not in (D_SEP, SIGMA_SEP):
            raise ValueError(f"mode must be {D_SEP!r} or {SIGMA_SEP!r}")
        if self.node_budget <= 0 or self.anneal_steps <= 0:
            raise ValueError("budgets must be positive")


@dataclass(frozen=True)
class SearchResult:
    loss: float
    graph: DirectedMixedGraph
    certified: bool
    nodes_expanded: int


class _BudgetExceeded(Exception):
    pass


class _Engine:
    """Bit-packed graphs plus separation reachability for one feature
    space, one experiment list and one separation mode."""

    def __init__(self, n: int, setup: Sequence[Experiment], mode: str):
        self.n = n
        self.mode = mode
        self.feats = feature_space(n)
        self.n_feats = len(self.feats)
        self.dir_count = n * (n - 1)
        self.all_bits = (1 << self.n_feats) - 1
        self.node_masks = [(1 << f.a) | (1 << f.b) for f in self.feats]
        self.dir_bit: dict[tuple[int, int], int] = {}
        self.bid_bit: dict[tuple[int, int], int] = {}
        for k, f in enumerate(self.feats):
            if k < self.dir_count:
                self.dir_bit[(f.a, f.b)] = k
            else:
                self.bid_bit[(f.a, f.b)] = k
                self.bid_bit[(f.b, f.a)] = k
        self.exp_survive: list[int] = []
        for e in setup:
            j = set(e.j)
            removed = 0
            for k, f in enumerate(self.feats):
                if k < self.dir_count:
                    if f.b in j:
                        removed |= 1 << k
                elif f.a in j or f.b in j:
                    removed |= 1 << k
            self.exp_survive.append(self.all_bits & ~removed)
        self._acy_cache: dict[int, int] = {}
        self._reach_cache: dict[int, int] = {}
        self._walk_cache: dict[int, int | None] = {}
        self._adj_cache: dict[int, tuple[list[int], list[int], list[int]]] = {}

    # -- conversions

    def bits_of_graph(self, g: DirectedMixedGraph) -> int:
        bits = 0
        for a, b in g.directed:
            bits |= 1 << self.dir_bit[(a, b)]
        for a, b in g.bidirected:
            bits |= 1 << self.bid_bit[(a, b)]
        return bits

    def graph_of_bits(self, bits: int) -> DirectedMixedGraph:
        directed = []
        bidirected = []
        m = bits
        while m:
            low = m & -m
            k = low.bit_length() - 1
            m ^= low
            f = self.feats[k]
            if k < self.dir_count:
                directed.append((f.a, f.b))
            else:
                bidirected.append((f.a, f.b))
        return DirectedMixedGraph(self.n, directed, bidirected)

    # -- graph transforms

    def relevant(self, bits: int, exp_idx: int) -> int:
        """The graph a constraint of this experiment is judged on:
        intervened edges dropped, then acyclified in sigma mode."""
        manip = bits & self.exp_survive[exp_idx]
        if self.mode == D_SEP:
            return manip
        return self._acyclify(manip)

    def _acyclify(self, bits: int) -> int:
        cached = self._acy_cache.get(bits)
        if cached is not None:
            return cached
        n = self.n
        out = [0] * n
        m = bits & ((1 << self.dir_count) - 1)
        while m:
            low = m & -m
            k = low.bit_length() - 1
            m ^= low
            f = self.feats[k]
            out[f.a] |= 1 << f.b
        # descendants by fixpoint propagation
        desc = list(out)
        changed = True
        while changed:
            changed = False
            for v in range(n):
                acc = desc[v]
                mm = desc[v]
                while mm:
                    low = mm & -mm
                    w = low.bit_length() - 1
                    mm ^= low
                    acc |= desc[w]
                if acc != desc[v]:
                    desc[v] = acc
                    changed = True
        comp = [0] * n
        for v in range(n):
            comp[v] = 1 << v
            for w in range(n):
                if w != v and (desc[v] >> w) & 1 and (desc[w] >> v) & 1:
                    comp[v] |= 1 << w
        result = 0
        # directed: v -> w iff v outside w's component and v points into it
        for v in range(n):
            for w in range(n):
                if v == w or (comp[w] >> v) & 1:
                    continue
                if out[v] & comp[w]:
                    result |= 1 << self.dir_bit[(v, w)]
        # bidirected: shared non-trivial component, or components linked
        # by any bidirected edge
        for v in range(n):
            for w in range(v + 1, n):
                if (comp[v] >> w) & 1:
                    result |= 1 << self.bid_bit[(v, w)]
        m = bits >> self.dir_count
        k = self.dir_count
        while m:
            if m & 1:
                f = self.feats[k]
                ca, cb = comp[f.a], comp[f.b]
                mm_a = ca
                while mm_a:
                    low_a = mm_a & -mm_a
                    v = low_a.bit_length() - 1
                    mm_a ^= low_a
                    mm_b = cb
                    while mm_b:
                        low_b = mm_b & -mm_b
                        w = low_b.bit_length() - 1
                        mm_b ^= low_b
                        if v != w:
                            result |= 1 << self.bid_bit[(v, w)]
            m >>= 1
            k += 1
        if len(self._acy_cache) > 2_000_000:
            self._acy_cache.clear()
        self._acy_cache[bits] = result
        return result

    # -- reachability

    def _adjacency(self, bits: int):
        cached = self._adj_cache.get(bits)
        if cached is not None:
            return cached
        n = self.n
        out = [0] * n
        inn = [0] * n
        sib = [0] * n
        m = bits
        while m:
            low = m & -m
            k = low.bit_length() - 1
            m ^= low
            f = self.feats[k]
            if k < self.dir_count:
                out[f.a] |= 1 << f.b
                inn[f.b] |= 1 << f.a
            else:
                sib[f.a] |= 1 << f.b
                sib[f.b] |= 1 << f.a
        if len(self._adj_cache) > 500_000:
            self._adj_cache.clear()
        self._adj_cache[bits] = (out, inn, sib)
        return out, inn, sib

    def reach_nodes(self, bits: int, x: int, c_mask: int) -> int:
        """Nodes touched by open walks out of x (x included).

        A walk stays open while every collider it passes lies in the
        conditioning set and every non-collider lies outside it.
        """
        key = ((bits << 5) | c_mask) << 3 | x
        cached = self._reach_cache.get(key)
        if cached is not None:
            return cached
        result = self._reach_nodes_uncached(bits, x, c_mask)
        if len(self._reach_cache) > 2_000_000:
            self._reach_cache.clear()
        self._reach_cache[key] = result
        return result

    def _reach_nodes_uncached(self, bits: int, x: int, c_mask: int) -> int:
        out, inn, sib = self._adjacency(bits)
        head = 0
        tail = 0
        head_new = out[x] | sib[x]
        tail_new = inn[x]
        while head_new or tail_new:
            head |= head_new
            tail |= tail_new
            nh = 0
            nt = 0
            m = head_new
            while m:
                low = m & -m
                v = low.bit_length() - 1
                m ^= low
                if (c_mask >> v) & 1:
                    nt |= inn[v]
                    nh |= sib[v]
                else:
                    nh |= out[v]
            m = tail_new
            while m:
                low = m & -m
                v = low.bit_length() - 1
                m ^= low
                if not (c_mask >> v) & 1:
                    nh |= out[v] | sib[v]
                    nt |= inn[v]
            head_new = nh & ~head
            tail_new = nt & ~tail
        return head | tail | (1 << x)

    def find_walk(self, bits: int, x: int, y: int, c_mask: int) -> int | None:
        """Feature bits of one open walk from x to y, or None if
        separated.  The bits are a subset of ``bits``."""
        key = (((bits << 5) | c_mask) << 6) | (x << 3) | y
        cached = self._walk_cache.get(key, -1)
        if cached != -1:
            return cached
        result = self._find_walk_uncached(bits, x, y, c_mask)
        if len(self._walk_cache) > 2_000_000:
            self._walk_cache.clear()
        self._walk_cache[key] = result
        return result

    def _find_walk_uncached(self, bits: int, x: int, y: int, c_mask: int) -> int | None:
        out, inn, sib = self._adjacency(bits)
        dir_bit, bid_bit = self.dir_bit, self.bid_bit
        # state key: node*2 + arrived_with_arrowhead
        parent: dict[int, tuple[int, int]] = {}
        queue: deque[int] = deque()

        def expand(v, prev_state, allow_tail, allow_head):
            if allow_tail:
                m = out[v]
                while m:
                    low = m & -m
                    w = low.bit_length() - 1
                    m ^= low
                    s = w * 2 + 1
                    if s not in parent:
                        parent[s] = (prev_state, dir_bit[(v, w)])
                        queue.append(s)
            if allow_head:
                m = inn[v]
                while m:
                    low = m & -m
                    w = low.bit_length() - 1
                    m ^= low
                    s = w * 2
                    if s not in parent:
                        parent[s] = (prev_state, dir_bit[(w, v)])
                        queue.append(s)
                m = sib[v]
                while m:
                    low = m & -m
                    w = low.bit_length() - 1
                    m ^= low
                    s = w * 2 + 1
                    if s not in parent:
                        parent[s] = (prev_state, bid_bit[(v, w)])
                        queue.append(s)

        expand(x, -1, True, True)
        while queue:
            state = queue.popleft()
            v, arrived_head = state >> 1, state & 1
            if v == y:
                walk = 0
                cur = state
                while cur != -1:
                    prev, bit = parent[cur]
                    walk |= 1 << bit
                    cur = prev
                return walk
            in_c = (c_mask >> v) & 1
            if arrived_head:
                expand(v, state, not in_c, in_c)
            elif not in_c:
                expand(v, state, True, True)
        return None


@dataclass(frozen=True)
class _PackedConstraint:
    exp_idx: int
    x: int
    y: int
    c_mask: int
    is_indep: bool
    weight: float


def _pack_constraints(
    constraints: ConstraintSet, setup: Sequence[Experiment]
) -> list[_PackedConstraint]:
    packed = []
    for c in constraints:
        if not (0 <= c.experiment_index < len(setup)):
            raise ValueError(
                f"constraint references experiment {c.experiment_index} "
                f"outside the {len(setup)}-experiment setup"
            )
        c_mask = 0
        for v in c.s:
            c_mask |= 1 << v
        packed.append(
            _PackedConstraint(
                exp_idx=c.experiment_index,
                x=c.i,
                y=c.j,
                c_mask=c_mask,
                is_indep=c.kind == "independent",
                weight=float(c.weight),
            )
        )
    return packed


_ENGINE_CACHE: dict[tuple, _Engine] = {}


def _engine_for(n: int, setup: Sequence[Experiment], mode: str) -> _Engine:
    key = (n, tuple(e.j for e in setup), mode)
    engine = _ENGINE_CACHE.get(key)
    if engine is None:
        engine = _Engine(n, setup, mode)
        _ENGINE_CACHE[key] = engine
    return engine


def graph_loss(
    g: DirectedMixedGraph,
    constraints: ConstraintSet,
    setup: Sequence[Experiment],
    mode: str = D_SEP,
) -> float:
    """Total weight of the constraints g fails to entail: an
    independence must map to separation (in the manipulated graph, under
    the chosen mode), a dependence to connection."""
    engine = _engine_for(g.n, setup, mode)
    packed = _pack_constraints(constraints, setup)
    bits = engine.bits_of_graph(g)
    rel = [engine.relevant(bits, k) for k in range(len(setup))]
    loss = 0.0
    for c in packed:
        r = engine.reach_nodes(rel[c.exp_idx], c.x, c.c_mask)
        connected = bool((r >> c.y) & 1)
        if connected == c.is_indep:
            loss += c.weight
    return loss


class _Search:
    """Exact branch and bound over feature assignments for one
    constraint set, reusable across pinned solves.

    Every constraint carries two certificates that make re-evaluation
    lazy: the open-walk reach set of its query on the decided-present
    graph (a violated independence shows up as soon as those edges alone
    connect the query) and one connecting walk on the
    everything-undecided-present graph (a violated dependence shows up
    as soon as no such walk survives).  Both sides are monotone, so each
    constraint resolves at most once per branch.  Certificates live in
    per-experiment numpy arrays so that the recheck triggers are bulk
    bit tests.
    """

    def __init__(
        self,
        constraints: ConstraintSet,
        setup: Sequence[Experiment],
        cfg: SearchConfig,
    ):
        self.setup = list(setup)
        self.cfg = cfg
        self.n = self.setup[0].n
        self.engine = _engine_for(self.n, self.setup, cfg.mode)
        self.packed = _pack_constraints(constraints, self.setup)
        self.by_exp: list[list[int]] = [[] for _ in self.setup]
        for cid, c in enumerate(self.packed):
            self.by_exp[c.exp_idx].append(cid)
        n_exp = len(self.setup)
        self.exps_of_bit = [
            [k for k in range(n_exp) if (1 << b) & self.engine.exp_survive[k]]
            for b in range(self.engine.n_feats)
        ]
        # constraint data in per-experiment arrays, indexed locally
        self.c_x = [[self.packed[c].x for c in ids] for ids in self.by_exp]
        self.c_y = [[self.packed[c].y for c in ids] for ids in self.by_exp]
        self.c_mask = [[self.packed[c].c_mask for c in ids] for ids in self.by_exp]
        self.c_w = [np.array([self.packed[c].weight for c in ids]) for ids in self.by_exp]
        self.c_indep = [
            np.array([self.packed[c].is_indep for c in ids], dtype=bool)
            for ids in self.by_exp
        ]
        self._block_cache: dict[tuple[int, int], float] = {}
        self._init_root()

    # -- root state shared by all solves

    def _init_root(self):
        eng = self.engine
        n_exp = len(self.setup)
        g_min, g_max = 0, eng.all_bits
        rel_min = [eng.relevant(g_min, k) for k in range(n_exp)]
        rel_max = [eng.relevant(g_max, k) for k in range(n_exp)]
        und = [np.ones(len(ids), dtype=bool) for ids in self.by_exp]
        rn = [np.zeros(len(ids), dtype=np.int64) for ids in self.by_exp]
        wb = [np.zeros(len(ids), dtype=np.int64) for ids in self.by_exp]
        fixed_loss = 0.0
        for e in range(n_exp):
            for t in range(len(self.by_exp[e])):
                x, y, cm = self.c_x[e][t], self.c_y[e][t], self.c_mask[e][t]
                indep = bool(self.c_indep[e][t])
                reach = eng.reach_nodes(rel_min[e], x, cm)
                if (reach >> y) & 1:
                    und[e][t] = False
                    if indep:
                        fixed_loss += float(self.c_w[e][t])
                    continue
                rn[e][t] = reach
                walk = eng.find_walk(rel_max[e], x, y, cm)
                if walk is None:
                    und[e][t] = False
                    if not indep:
                        fixed_loss += float(self.c_w[e][t])
                else:
                    wb[e][t] = walk
        self._root = (rel_min, rel_max, und, rn, wb, fixed_loss)

    def _reset(self):
        rel_min, rel_max, und, rn, wb, fixed_loss = self._root
        self.g_min = 0
        self.g_max = self.engine.all_bits
        self.rel_min = list(rel_min)
        self.rel_max = list(rel_max)
        self.und = [a.copy() for a in und]
        self.rn = [a.copy() for a in rn]
        self.wb = [a.copy() for a in wb]
        self.fixed_loss = fixed_loss
        self.present_count = 0
        self.trail: list[tuple] = []

    # -- incremental decisions

    def _decide(self, bit_index: int, present: bool) -> None:
        eng = self.engine
        bit = 1 << bit_index
        if present:
            self.trail.append(("minbits", self.g_min, self.present_count))
            self.g_min |= bit
            self.present_count += 1
        else:
            self.trail.append(("maxbits", self.g_max, self.present_count))
            self.g_max &= ~bit
        for e in self.exps_of_bit[bit_index]:
            if present:
                new_rel = eng.relevant(self.g_min, e)
                old_rel = self.rel_min[e]
                if new_rel == old_rel:
                    continue
                self.trail.append(("relmin", e, old_rel))
                self.rel_min[e] = new_rel
                self._process_min_side(e, old_rel, new_rel)
            else:
                new_rel = eng.relevant(self.g_max, e)
                old_rel = self.rel_max[e]
                if new_rel == old_rel:
                    continue
                self.trail.append(("relmax", e, old_rel))
                self.rel_max[e] = new_rel
                self._process_max_side(e, new_rel)

    def _diff_node_mask(self, diff: int) -> int:
        mask = 0
        node_masks = self.engine.node_masks
        while diff:
            low = diff & -diff
            mask |= node_masks[low.bit_length() - 1]
            diff ^= low
        return mask

    def _process_min_side(self, e: int, old_rel: int, new_rel: int) -> None:
        # an edge that touches no node a query's open walks can reach
        # cannot change that query's reachability, so only touched
        # constraints recheck; reach sets are not rewound on backtrack
        # (a stale superset only triggers spurious rechecks)
        eng = self.engine
        touch = self._diff_node_mask(new_rel ^ old_rel)
        und_e = self.und[e]
        hits = np.nonzero(und_e & ((self.rn[e] & touch) != 0))[0]
        if not hits.size:
            return
        xs, ys, cms = self.c_x[e], self.c_y[e], self.c_mask[e]
        indep_e, w_e, rn_e = self.c_indep[e], self.c_w[e], self.rn[e]
        for t in hits:
            reach = eng.reach_nodes(new_rel, xs[t], cms[t])
            if (reach >> ys[t]) & 1:
                und_e[t] = False
                delta = float(w_e[t]) if indep_e[t] else 0.0
                self.fixed_loss += delta
                self.trail.append(("res", e, t, delta))
            else:
                rn_e[t] = reach

    def _process_max_side(self, e: int, new_rel: int) -> None:
        eng = self.engine
        und_e = self.und[e]
        hits = np.nonzero(und_e & ((self.wb[e] & ~new_rel) != 0))[0]
        if not hits.size:
            return
        xs, ys, cms = self.c_x[e], self.c_y[e], self.c_mask[e]
        indep_e, w_e, wb_e = self.c_indep[e], self.c_w[e], self.wb[e]
        for t in hits:
            walk = eng.find_walk(new_rel, xs[t], ys[t], cms[t])
            if walk is None:
                und_e[t] = False
                delta = 0.0 if indep_e[t] else float(w_e[t])
                self.fixed_loss += delta
                self.trail.append(("res", e, t, delta))
            else:
                # walks found on a shrunken graph stay valid after undo
                wb_e[t] = walk

    def _undo(self, mark: int) -> None:
        while len(self.trail) > mark:
            entry = self.trail.pop()
            tag = entry[0]
            if tag == "res":
                _, e, t, delta = entry
                self.und[e][t] = True
                self.fixed_loss -= delta
            elif tag == "relmin":
                _, e, old = entry
                self.rel_min[e] = old
            elif tag == "relmax":
                _, e, old = entry
                self.rel_max[e] = old
            elif tag == "minbits":
                _, old_bits, old_count = entry
                self.g_min = old_bits
                self.present_count = old_count
            else:
                _, old_bits, old_count = entry
                self.g_max = old_bits
                self.present_count = old_count

    # -- full evaluation (annealing and warm starts)

    def block_loss(self, exp_idx: int, rel_bits: int) -> float:
        key = (exp_idx, rel_bits)
        cached = self._block_cache.get(key)
        if cached is not None:
            return cached
        eng = self.engine
        memo: dict[tuple[int, int], int] = {}
        total = 0.0
        for cid in self.by_exp[exp_idx]:
            c = self.packed[cid]
            rk = (c.x, c.c_mask)
            r = memo.get(rk)
            if r is None:
                r = eng.reach_nodes(rel_bits, c.x, c.c_mask)
                memo[rk] = r
            if bool((r >> c.y) & 1) == c.is_indep:
                total += c.weight
        if len(self._block_cache) > 2_000_000:
            self._block_cache.clear()
        self._block_cache[key] = total
        return total

    def full_loss(self, bits: int) -> float:
        return sum(
            self.block_loss(k, self.engine.relevant(bits, k))
            for k in range(len(self.setup))
        )

    # -- the solve

    def solve(
        self,
        pinned: dict[int, bool] | None = None,
        rng: np.random.Generator | None = None,
        warm_start_bits: int | None = None,
        trace=None,
    ) -> SearchResult:
        pinned = pinned or {}
        self._reset()
        deadline = (
            time.monotonic() + self.cfg.time_budget_s
            if self.cfg.time_budget_s is not None
            else None
        )
        self._nodes = 0
        self._deadline = deadline
        self._trace = trace

        for bit_index in sorted(pinned):
            self._decide(bit_index, pinned[bit_index])

        self._inc_loss = math.inf
        self._inc_edges = -1
        self._inc_bits = 0
        if warm_start_bits is not None:
            ok = all(
                bool(warm_start_bits & (1 << b)) == v for b, v in pinned.items()
            )
            if ok:
                self._inc_loss = self.full_loss(warm_start_bits)
                self._inc_edges = bin(warm_start_bits).count("1")
                self._inc_bits = warm_start_bits

        order = [k for k in range(self.engine.n_feats) if k not in pinned]
        certified = True
        try:
            if self.n <= self.cfg.exact_node_limit:
                self._dfs(order, 0)
            else:
                raise _BudgetExceeded
        except _BudgetExceeded:
            certified = False
            self._anneal(pinned, rng)
        return SearchResult(
            loss=self._inc_loss,
            graph=self.engine.graph_of_bits(self._inc_bits),
            certified=certified,
            nodes_expanded=self._nodes,
        )

    def _dfs(self, order: list[int], depth: int) -> None:
        self._nodes += 1
        if self._nodes > self.cfg.node_budget:
            raise _BudgetExceeded
        if (
            self._deadline is not None
            and self._nodes % 1024 == 0
            and time.monotonic() > self._deadline
        ):
            raise _BudgetExceeded
        if depth == len(order):
            loss = self.fixed_loss
            if loss < self._inc_loss - _EPS or (
                loss < self._inc_loss + _EPS and self.present_count < self._inc_edges
            ):
                self._inc_loss = loss
                self._inc_edges = self.present_count
                self._inc_bits = self.g_min
                if self._trace is not None:
                    self._trace.write(
                        json.dumps(
                            {
                                "nodes": self._nodes,
                                "incumbent": loss,
                                "bound": self.fixed_loss,
                            }
                        )
                        + "\n"
                    )
            return
        bit_index = order[depth]
        for value in (False, True):
            mark = len(self.trail)
            self._decide(bit_index, value)
            if not self._pruned():
                self._dfs(order, depth + 1)
            self._undo(mark)

    def _pruned(self) -> bool:
        if self.fixed_loss > self._inc_loss + _EPS:
            return True
        if (
            self.fixed_loss > self._inc_loss - _EPS
            and self.present_count >= self._inc_edges >= 0
        ):
            return True
        return False

    # -- annealing fallback

    def _anneal(self, pinned: dict[int, bool], rng: np.random.Generator | None):
        if rng is None:
            rng = np.random.default_rng(0)
        cfg = self.cfg
        free = [k for k in range(self.engine.n_feats) if k not in pinned]
        bits = self._inc_bits if self._inc_edges >= 0 else 0
        for b, v in pinned.items():
            bits = (bits | (1 << b)) if v else (bits & ~(1 << b))
        exps_of_bit = [
            [k for k in range(len(self.setup)) if (1 << b) & self.engine.exp_survive[k]]
            for b in range(self.engine.n_feats)
        ]
        current_blocks = [
            self.block_loss(k, self.engine.relevant(bits, k))
            for k in range(len(self.setup))
        ]
        energy = sum(current_blocks)
        best_bits, best_energy = bits, energy
        cooling = (cfg.anneal_t_end / cfg.anneal_t0) ** (1.0 / cfg.anneal_steps)
        temp = cfg.anneal_t0
        for _ in range(cfg.anneal_steps):
            b = free[int(rng.integers(len(free)))]
            cand = bits ^ (1 << b)
            delta = 0.0
            new_blocks = {}
            for k in exps_of_bit[b]:
                nb = self.block_loss(k, self.engine.relevant(cand, k))
                new_blocks[k] = nb
                delta += nb - current_blocks[k]
            if delta <= 0 or rng.random() < math.exp(-delta / temp):
                bits = cand
                energy += delta
                for k, nb in new_blocks.items():
                    current_blocks[k] = nb
                if energy < best_energy - _EPS or (
                    energy < best_energy + _EPS
                    and bin(bits).count("1") < bin(best_bits).count("1")
                ):
                    best_bits, best_energy = bits, energy
            temp *= cooling
        if best_energy < self._inc_loss - _EPS or (
            best_energy < self._inc_loss + _EPS
            and bin(best_bits).count("1") < self._inc_edges
        ):
            self._inc_loss = best_energy
            self._inc_edges = bin(best_bits).count("1")
            self._inc_bits = best_bits


def minimize_loss(
    constraints: ConstraintSet,
    setup: Sequence[Experiment],
    cfg: SearchConfig,
    pinned: dict[Feature, bool] | None = None,
    rng: np.random.Generator | None = None,
    trace=None,
) -> SearchResult:
    """Find a minimum-loss graph.

    Exact (branch and bound) while the node count is at most
    cfg.exact_node_limit and the budget lasts; otherwise simulated
    annealing with ``certified=False``.  Ties prefer fewer edges, then
    the first graph in canonical feature order.  ``pinned`` forces
    individual features present or absent.
    """
    search = _Search(constraints, setup, cfg)
    pins = {}
    if pinned:
        index = {f: k for k, f in enumerate(search.engine.feats)}
        pins = {index[f]: bool(v) for f, v in pinned.items()}
    return search.solve(pins, rng=rng, trace=trace)


def feature_confidence(
    constraints: ConstraintSet,
    setup: Sequence[Experiment],
    cfg: SearchConfig,
    feature: Feature,
    rng: np.random.Generator | None = None,
) -> float:
    """Confidence score of one feature: optimal loss with the feature
    forced absent minus optimal loss with it forced present.  Positive
    favors presence."""
    score, _ = _confidence_scores(constraints, setup, cfg, [feature], rng)
    return score[feature]


def _confidence_scores(
    constraints: ConstraintSet,
    setup: Sequence[Experiment],
    cfg: SearchConfig,
    feats: Sequence[Feature],
    rng: np.random.Generator | None = None,
) -> tuple[dict[Feature, float], bool]:
    """Scores for many features, solving each side once.

    The unpinned optimum already realizes one side of every feature's
    pair of pinned solves (pinning a feature to the value the optimal
    graph has cannot change the optimal loss), so only the opposite side
    is searched, warm-started from the optimum with that feature
    flipped.
    """
    search = _Search(constraints, setup, cfg)
    base = search.solve({}, rng=rng)
    certified = base.certified
    base_bits = search.engine.bits_of_graph(base.graph)
    index = {f: k for k, f in enumerate(search.engine.feats)}
    scores: dict[Feature, float] = {}
    for f in feats:
        bit = index[f]
        present_in_base = bool(base_bits & (1 << bit))
        res = search.solve(
            {bit: not present_in_base},
            rng=rng,
            warm_start_bits=base_bits ^ (1 << bit),
        )
        certified = certified and res.certified
        if present_in_base:
            loss_present, loss_absent = base.loss, res.loss
        else:
            loss_present, loss_absent = res.loss, base.loss
        scores[f] = loss_absent - loss_present
    return scores, certified


def ensemble_predict(scores: FeatureScoreTable, t_asp: float = 0.0) -> dict[Feature, bool]:
    """Sparse-prior ensemble: a feature is present only when its score
    strictly exceeds the threshold, so undetermined features (score 0)
    fall back to the all-absent weak classifier."""
    return scores.threshold(t_asp)


@dataclass(frozen=True)
class AspResult:
    table: FeatureScoreTable
    certified: bool


def asp_discover_full(
    datasets: Sequence[Dataset],
    setup: Sequence[Experiment],
    cfg: SearchConfig,
    truth: LinearScm | None = None,
    rng: np.random.Generator | None = None,
) -> AspResult:
    """Constraint-based discovery: build the weighted constraint set,
    then score all features by pinned-solve loss differences.

    Finite datasets are scanned with independence tests at
    cfg.alpha_asp.  Exact datasets take the infinite route instead: the
    complete list of true (in)dependences of the generating model, each
    with weight one, which requires ``truth``.
    """
    n = setup[0].n
    max_cond = n - 2
    exact_flags = [ds.is_exact for ds in datasets]
    if any(exact_flags) and not all(exact_flags):
        raise ValueError("datasets mix exact and finite modes")
    if all(exact_flags):
        if truth is None:
            raise ValueError(
                "infinite mode derives its constraints from the generating "
                "model; pass truth="
            )
        constraints = oracle_constraints(truth, setup, max_cond)
    else:
        constraints = enumerate_constraints(datasets, cfg.alpha_asp, max_cond)
    scores, certified = _confidence_scores(
        constraints, setup, cfg, feature_space(n), rng
    )
    method = "asp_d" if cfg.mode == D_SEP else "asp_s"
    return AspResult(
        table=FeatureScoreTable(n=n, method=method, scores=scores),
        certified=certified,
    )


def asp_discover(
    datasets: Sequence[Dataset],
    setup: Sequence[Experiment],
    cfg: SearchConfig,
    truth: LinearScm | None = None,
    rng: np.random.Generator | None = None,
) -> FeatureScoreTable:
    return asp_discover_full(datasets, setup, cfg, truth=truth, rng=rng).table
