import numpy as np
import pytest

from conftest import random_acyclic_dmg, random_dmg, walk_oracle_connected
from loopcausal.graphs import (
    DirectedMixedGraph,
    SeparationQuery,
    Walk,
    WalkStep,
    acyclify,
    d_separated,
    has_directed_cycle,
    intervene_graph,
    is_collider,
    sigma_separated,
    strongly_connected_components,
)


def q(x, y, c=()):
    return SeparationQuery(x, y, c)


class TestDirectedMixedGraph:
    def test_rejects_self_loops(self):
        with pytest.raises(ValueError):
            DirectedMixedGraph(2, [(0, 0)])
        with pytest.raises(ValueError):
            DirectedMixedGraph(2, [], [(1, 1)])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            DirectedMixedGraph(2, [(0, 2)])

    def test_bidirected_canonical_and_deduplicated(self):
        g = DirectedMixedGraph(3, [], [(2, 0), (0, 2)])
        assert g.bidirected == frozenset({(0, 2)})

    def test_json_round_trip(self):
        g = DirectedMixedGraph(4, [(0, 1), (2, 3)], [(1, 3)])
        assert DirectedMixedGraph.from_json(g.to_json()) == g


class TestWalkAndColliders:
    def step(self, a, b, head_a, head_b):
        return WalkStep(a, b, head_a, head_b)

    def test_chain_middle_is_not_collider(self):
        # 0 -> 1 -> 2
        w = Walk([self.step(0, 1, False, True), self.step(1, 2, False, True)])
        assert not is_collider(w, 0)

    def test_head_to_head_is_collider(self):
        # 0 -> 1 <- 2
        w = Walk([self.step(0, 1, False, True), self.step(1, 2, True, False)])
        assert is_collider(w, 0)

    def test_arrow_into_bidirected_is_collider(self):
        # 0 -> 1 <-> 2
        w = Walk([self.step(0, 1, False, True), self.step(1, 2, True, True)])
        assert is_collider(w, 0)

    def test_position_out_of_range(self):
        w = Walk([self.step(0, 1, False, True)])
        with pytest.raises(IndexError):
            is_collider(w, 0)

    def test_junction_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Walk([self.step(0, 1, False, True), self.step(2, 0, False, True)])

    def test_edges_may_repeat(self):
        w = Walk(
            [
                self.step(0, 1, True, True),
                self.step(1, 0, True, True),
                self.step(0, 1, True, True),
            ]
        )
        assert len(w) == 3


class TestStronglyConnectedComponents:
    def test_edgeless(self):
        g = DirectedMixedGraph(3)
        assert strongly_connected_components(g) == [
            frozenset({0}),
            frozenset({1}),
            frozenset({2}),
        ]

    def test_two_cycle_plus_isolated(self):
        g = DirectedMixedGraph(3, [(0, 1), (1, 0)])
        assert strongly_connected_components(g) == [frozenset({0, 1}), frozenset({2})]

    def test_three_cycle(self):
        g = DirectedMixedGraph(3, [(0, 1), (1, 2), (2, 0)])
        assert strongly_connected_components(g) == [frozenset({0, 1, 2})]

    def test_bidirected_edges_ignored(self):
        g = DirectedMixedGraph(3, [], [(0, 1), (1, 2)])
        assert len(strongly_connected_components(g)) == 3


class TestHasDirectedCycle:
    def test_chain(self):
        assert not has_directed_cycle(DirectedMixedGraph(3, [(0, 1), (1, 2)]))

    def test_two_cycle(self):
        assert has_directed_cycle(DirectedMixedGraph(2, [(0, 1), (1, 0)]))

    def test_bidirected_only(self):
        assert not has_directed_cycle(DirectedMixedGraph(2, [], [(0, 1)]))


class TestInterveneGraph:
    def test_all_edges_into_target_removed(self):
        g = DirectedMixedGraph(2, [(0, 1)], [(0, 1)])
        assert intervene_graph(g, [1]).edge_count() == 0

    def test_null_intervention_is_identity(self):
        g = DirectedMixedGraph(3, [(0, 1), (1, 2)])
        assert intervene_graph(g, []) == g

    def test_rule_applied_edge_by_edge(self):
        g = DirectedMixedGraph(3, [(0, 1), (1, 0)], [(0, 2)])
        out = intervene_graph(g, [0])
        assert out.directed == frozenset({(0, 1)})
        assert out.bidirected == frozenset()


class TestDSeparation:
    def test_chain_blocked_by_middle(self):
        g = DirectedMixedGraph(3, [(0, 1), (1, 2)])
        assert d_separated(g, q(0, 2, [1]))
        assert not d_separated(g, q(0, 2))

    def test_collider_opens_when_conditioned(self):
        g = DirectedMixedGraph(3, [(0, 1), (2, 1)])
        assert d_separated(g, q(0, 2))
        assert not d_separated(g, q(0, 2, [1]))

    def test_cyclic_graph_connected(self):
        g = DirectedMixedGraph(4, [(0, 1), (1, 0), (2, 0), (1, 3)])
        assert not d_separated(g, q(2, 3))

    def test_symmetry_and_oracle_agreement(self):
        rng = np.random.default_rng(101)
        for _ in range(150):
            g = random_dmg(rng, 4)
            x, y = rng.choice(4, size=2, replace=False)
            rest = [v for v in range(4) if v not in (x, y)]
            c = [v for v in rest if rng.random() < 0.4]
            sep = d_separated(g, q(x, y, c))
            assert sep == d_separated(g, q(y, x, c))
            assert sep == (not walk_oracle_connected(g, x, y, c))

    def test_adding_edges_never_separates(self):
        rng = np.random.default_rng(55)
        for _ in range(100):
            g = random_dmg(rng, 4, p_dir=0.2, p_bid=0.1)
            x, y = rng.choice(4, size=2, replace=False)
            c = [v for v in range(4) if v not in (x, y) and rng.random() < 0.4]
            if d_separated(g, q(x, y, c)):
                continue
            # add one random absent edge
            extra_dir = [
                (a, b)
                for a in range(4)
                for b in range(4)
                if a != b and not g.has_directed(a, b)
            ]
            if not extra_dir:
                continue
            a, b = extra_dir[rng.integers(len(extra_dir))]
            g2 = DirectedMixedGraph(4, set(g.directed) | {(a, b)}, g.bidirected)
            assert not d_separated(g2, q(x, y, c))


class TestAcyclify:
    def test_acyclic_input_unchanged(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            g = random_acyclic_dmg(rng, 5)
            assert acyclify(g) == g

    def test_two_cycle_becomes_bidirected(self):
        g = DirectedMixedGraph(2, [(0, 1), (1, 0)])
        out = acyclify(g)
        assert out.directed == frozenset()
        assert out.bidirected == frozenset({(0, 1)})

    def test_construction_rules(self):
        # parents of a loop spread over its members; the loop itself
        # becomes a bidirected clique; children stay put
        g = DirectedMixedGraph(4, [(2, 0), (0, 1), (1, 0), (1, 3)])
        out = acyclify(g)
        assert out.directed == frozenset({(2, 0), (2, 1), (1, 3)})
        assert out.bidirected == frozenset({(0, 1)})

    def test_bidirected_spreads_over_components(self):
        g = DirectedMixedGraph(4, [(0, 1), (1, 0)], [(1, 2)])
        out = acyclify(g)
        assert out.bidirected == frozenset({(0, 1), (0, 2), (1, 2)})

    def test_output_always_acyclic(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            g = random_dmg(rng, 5, p_dir=0.3)
            assert not has_directed_cycle(acyclify(g))


class TestSigmaSeparation:
    def test_equals_d_separation_on_acyclic(self):
        rng = np.random.default_rng(13)
        for _ in range(500):
            g = random_acyclic_dmg(rng, 5)
            x, y = rng.choice(5, size=2, replace=False)
            c = [v for v in range(5) if v not in (x, y) and rng.random() < 0.4]
            query = q(x, y, c)
            assert sigma_separated(g, query) == d_separated(g, query)

    def test_loop_examples(self):
        g = DirectedMixedGraph(4, [(2, 0), (0, 1), (1, 0), (1, 3)])
        assert sigma_separated(g, q(2, 3, [0, 1]))
        assert not sigma_separated(g, q(2, 3, [0]))

    def test_sigma_monotone_under_edge_addition(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            g = random_dmg(rng, 4, p_dir=0.25, p_bid=0.1)
            x, y = rng.choice(4, size=2, replace=False)
            c = [v for v in range(4) if v not in (x, y) and rng.random() < 0.4]
            if sigma_separated(g, q(x, y, c)):
                continue
            extra = [
                (a, b)
                for a in range(4)
                for b in range(4)
                if a != b and not g.has_directed(a, b)
            ]
            if not extra:
                continue
            a, b = extra[rng.integers(len(extra))]
            g2 = DirectedMixedGraph(4, set(g.directed) | {(a, b)}, g.bidirected)
            assert not sigma_separated(g2, q(x, y, c))
