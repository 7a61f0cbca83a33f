import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from causalaid.graph import (AdjustmentKind, CausalDag, DagError, backdoor_satisfied,
                             d_separated, minimal_backdoor_sets, parent_adjustment_set,
                             parse_dag, serialize_dag)
from causalaid.scm import all_dags, brute_force_d_separated, random_dag

SOMALIA_PARENTS = {"MarketPrices", "SorghumProduction", "Fatalities", "Displacement",
                   "Population"}


def dag(edges, t, y, nodes=None):
    if nodes is None:
        nodes = list(dict.fromkeys(v for e in edges for v in e))
    return CausalDag(tuple(nodes), tuple(edges), t, y)


@st.composite
def dags(draw, max_nodes=7):
    n = draw(st.integers(2, max_nodes))
    names = [f"N{i}" for i in range(n)]
    order = draw(st.permutations(names))
    edges = [(order[i], order[j]) for i, j in itertools.combinations(range(n), 2)
             if draw(st.booleans())]
    t, y = draw(st.lists(st.sampled_from(names), min_size=2, max_size=2, unique=True))
    return CausalDag(tuple(names), tuple(edges), t, y)


class TestParse:
    def test_chain(self):
        g = parse_dag("A -> B\nB -> C", treatment="A", outcome="C")
        assert len(g.nodes) == 3
        assert len(g.edges) == 2

    def test_two_cycle_rejected(self):
        with pytest.raises(DagError, match="cycle"):
            parse_dag("A -> B\nB -> A", treatment="A", outcome="B")

    def test_cycle_error_names_lines(self):
        with pytest.raises(DagError, match="lines 2, 3, 4"):
            parse_dag("X -> A\nA -> B\nB -> C\nC -> A", treatment="A", outcome="C")

    def test_bundled_somalia(self, somalia_dag):
        assert len(somalia_dag.nodes) == 9
        assert somalia_dag.treatment == "Cash"
        assert somalia_dag.outcome == "GAM"
        assert set(somalia_dag.parents("Cash")) == SOMALIA_PARENTS

    def test_headers_comments_and_isolated_nodes(self):
        text = "# study graph\ntreatment: T\noutcome: Y\r\nT -> Y  # effect\nN\n"
        g = parse_dag(text)
        assert g.nodes == ("T", "Y", "N")
        assert g.edges == (("T", "Y"),)

    @pytest.mark.parametrize("text, message", [
        ("A -> \nB -> C", "line 1"),
        ("A -> B\nA -> B", "duplicate edge"),
        ("A -> B\nfoo: bar", "unknown directive"),
        ("A -> B", "treatment and outcome"),
        ("A -> A\ntreatment: A\noutcome: B\nB", "self-edge"),
    ])
    def test_malformed(self, text, message):
        with pytest.raises(DagError, match=message):
            parse_dag(text)

    def test_unknown_role(self):
        with pytest.raises(DagError, match="unknown treatment"):
            parse_dag("A -> B", treatment="Q", outcome="B")

    def test_roundtrip_somalia(self, somalia_dag):
        assert parse_dag(serialize_dag(somalia_dag)) == somalia_dag

    @settings(max_examples=150, deadline=None)
    @given(dags())
    def test_roundtrip_property(self, g):
        assert parse_dag(serialize_dag(g)) == g


class TestDSeparation:
    def test_chain_blocked(self):
        g = dag([("A", "B"), ("B", "C")], "A", "C")
        assert d_separated(g, "A", "C", {"B"})
        assert not d_separated(g, "A", "C", set())

    def test_collider(self):
        g = dag([("A", "C"), ("B", "C")], "A", "B")
        assert d_separated(g, "A", "B", set())
        assert not d_separated(g, "A", "B", {"C"})

    def test_collider_descendant_opens(self):
        g = dag([("A", "C"), ("B", "C"), ("C", "D")], "A", "B")
        assert not d_separated(g, "A", "B", {"D"})

    def test_fork(self):
        g = dag([("C", "A"), ("C", "B")], "A", "B")
        assert not d_separated(g, "A", "B", set())
        assert d_separated(g, "A", "B", {"C"})

    def test_disconnected(self):
        g = dag([("A", "B")], "A", "B", nodes=["A", "B", "C"])
        assert d_separated(g, "A", "C", set())

    def test_unknown_node(self):
        g = dag([("A", "B")], "A", "B")
        with pytest.raises(DagError):
            d_separated(g, "A", "Q", set())

    def test_matches_oracle_on_all_three_node_dags(self):
        for g in all_dags(3):
            for x, y in itertools.permutations(g.nodes, 2):
                rest = [v for v in g.nodes if v not in (x, y)]
                for k in range(len(rest) + 1):
                    for z in itertools.combinations(rest, k):
                        assert d_separated(g, x, y, z) == brute_force_d_separated(g, x, y, z)

    def test_matches_oracle_on_random_dags(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            g = random_dag(7, 0.35, rng)
            for _ in range(20):
                x, y = rng.choice(g.nodes, size=2, replace=False)
                rest = [v for v in g.nodes if v not in (x, y)]
                z = [v for v in rest if rng.random() < 0.3]
                assert d_separated(g, x, y, z) == brute_force_d_separated(g, x, y, z)

    @settings(max_examples=200, deadline=None)
    @given(dags(), st.data())
    def test_symmetric(self, g, data):
        x, y = data.draw(st.lists(st.sampled_from(g.nodes), min_size=2, max_size=2, unique=True))
        z = data.draw(st.sets(st.sampled_from([v for v in g.nodes if v not in (x, y)]
                                              or ["_"]))) - {"_"}
        assert d_separated(g, x, y, z) == d_separated(g, y, x, z)


class TestBackdoor:
    def test_confounding_triangle(self):
        g = dag([("X", "T"), ("X", "Y"), ("T", "Y")], "T", "Y")
        assert backdoor_satisfied(g, {"X"})
        assert not backdoor_satisfied(g, set())

    def test_mediator_is_rejected(self):
        g = dag([("T", "M"), ("M", "Y")], "T", "Y")
        assert not backdoor_satisfied(g, {"M"})

    def test_somalia_parents(self, somalia_dag):
        assert backdoor_satisfied(somalia_dag, SOMALIA_PARENTS)

    def test_parent_set_chain(self):
        g = dag([("A", "T"), ("T", "Y")], "T", "Y")
        z = parent_adjustment_set(g)
        assert z.members == {"A"}
        assert z.kind is AdjustmentKind.PARENT

    def test_parent_set_somalia(self, somalia_dag):
        assert parent_adjustment_set(somalia_dag).members == SOMALIA_PARENTS

    def test_parent_set_outcome_parent_rejected(self):
        with pytest.raises(DagError, match="parent of treatment"):
            parent_adjustment_set(dag([("Y", "T")], "T", "Y"))

    def test_parent_set_of_root(self):
        g = dag([("T", "Y")], "T", "Y")
        assert parent_adjustment_set(g).members == frozenset()

    def test_minimal_triangle(self):
        g = dag([("X", "T"), ("X", "Y"), ("T", "Y")], "T", "Y")
        assert [s.members for s in minimal_backdoor_sets(g, 3)] == [{"X"}]

    def test_minimal_empty_set(self):
        g = dag([("T", "Y")], "T", "Y", nodes=["T", "Y", "N"])
        sets = minimal_backdoor_sets(g, 2)
        assert [s.members for s in sets] == [frozenset()]
        assert sets[0].kind is AdjustmentKind.MINIMAL_BACKDOOR

    def test_minimal_two_confounders(self):
        g = dag([("X1", "T"), ("X1", "Y"), ("X2", "T"), ("X2", "Y"), ("T", "Y")], "T", "Y")
        # oracle: every subset of the non-descendants, checked directly
        valid = [set(c) for k in range(3) for c in itertools.combinations(["X1", "X2"], k)
                 if backdoor_satisfied(g, c)]
        assert valid == [{"X1", "X2"}]
        assert [s.members for s in minimal_backdoor_sets(g, 2)] == [{"X1", "X2"}]

    def test_somalia_minimal_is_parent_set(self, somalia_dag):
        sets = minimal_backdoor_sets(somalia_dag, 5)
        assert [s.members for s in sets] == [SOMALIA_PARENTS]
        assert minimal_backdoor_sets(somalia_dag, 4) == []

    @settings(max_examples=150, deadline=None)
    @given(dags())
    def test_parent_set_always_valid(self, g):
        assume(g.outcome not in g.parents(g.treatment))
        assert backdoor_satisfied(g, parent_adjustment_set(g).members)

    @settings(max_examples=100, deadline=None)
    @given(dags(max_nodes=6))
    def test_minimal_sets_are_valid_and_minimal(self, g):
        for s in minimal_backdoor_sets(g, 3):
            assert backdoor_satisfied(g, s.members)
            for k in range(len(s.members)):
                for sub in itertools.combinations(sorted(s.members), k):
                    assert not backdoor_satisfied(g, sub)


class TestDagStructure:
    def test_descendants_and_ancestors(self):
        g = dag([("A", "B"), ("B", "C"), ("D", "C")], "A", "C")
        assert g.descendants("A") == {"B", "C"}
        assert g.ancestors(["C"]) >= {"A", "B", "D"}

    def test_topological_order(self, somalia_dag):
        order = somalia_dag.topological_order()
        pos = {v: i for i, v in enumerate(order)}
        assert all(pos[a] < pos[b] for a, b in somalia_dag.edges)

    def test_bad_edge_endpoint(self):
        with pytest.raises(DagError):
            CausalDag(("A", "B"), (("A", "C"),), "A", "B")
