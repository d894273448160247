import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_kmst, random_kmst_graph
from sdaeto.adgraph import KmstGraph
from sdaeto.errors import InfeasibleError, InstanceTooLargeError
from sdaeto.kmst import TreeSolution, kmst_exact, kmst_heuristic, verify_tree


@pytest.fixture
def triangle():
    return KmstGraph((1, 1, 1), {(0, 1): 1, (1, 2): 2, (0, 2): 3})


def test_triangle(triangle):
    sol = kmst_exact(triangle, 2)
    assert sol.vertices == {0, 1}
    assert sol.objective == 1
    assert brute_kmst(triangle, 2)[0] == 1


def test_k_zero_gives_empty(triangle):
    assert kmst_exact(triangle, 0) == TreeSolution.empty()
    assert kmst_heuristic(triangle, 0) == TreeSolution.empty()


def test_full_quota_is_mst(triangle):
    sol = kmst_exact(triangle, 3)
    assert sol.objective == 3
    assert sol.edges == {(0, 1), (1, 2)}


def test_infeasible_k(triangle):
    with pytest.raises(InfeasibleError):
        kmst_exact(triangle, 4)
    with pytest.raises(InfeasibleError):
        kmst_heuristic(triangle, 4)


def test_disconnected_rewards_do_not_combine():
    g = KmstGraph((2, 2), {})
    with pytest.raises(InfeasibleError):
        kmst_exact(g, 3)
    assert kmst_exact(g, 2).vertices == {0}


def test_size_limit():
    g = KmstGraph((1,) * 17, {(i, i + 1): 1 for i in range(16)})
    with pytest.raises(InstanceTooLargeError, match="heuristic"):
        kmst_exact(g, 3)
    assert kmst_exact(g, 3, exact_limit=17).objective == 2


def test_negative_edges_are_taken_when_free():
    # 0 alone meets k, but adding 1 lowers the weight
    g = KmstGraph((3, 0), {(0, 1): -2})
    sol = kmst_exact(g, 3)
    assert sol.objective == -2 and sol.vertices == {0, 1}


def test_requires_are_honoured():
    g = KmstGraph((5, 0, 0), {(0, 1): 4, (0, 2): 1}, requires=(frozenset({1}), (), ()))
    sol = kmst_exact(g, 5)
    assert sol.vertices == {0, 1} and sol.objective == 4


def test_exhaustive_small_graphs_sample():
    """Every labelled topology on up to 4 vertices, seeded weights and rewards."""
    rng = np.random.default_rng(0)
    from itertools import combinations
    for n in range(1, 5):
        pairs = list(combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            edges = {p: int(rng.integers(-2, 4)) for i, p in enumerate(pairs) if mask >> i & 1}
            reward = tuple(int(rng.integers(0, 4)) for _ in range(n))
            g = KmstGraph(reward, edges)
            k = int(rng.integers(1, sum(reward) + 2))
            want = brute_kmst(g, k)
            if want is None:
                with pytest.raises(InfeasibleError):
                    kmst_exact(g, k)
            else:
                got = kmst_exact(g, k)
                assert got.objective == want[0]
                assert tuple(sorted(got.vertices)) == want[2]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_solution_verifies(seed):
    rng = np.random.default_rng(seed)
    g = random_kmst_graph(rng, int(rng.integers(2, 8)))
    k = int(rng.integers(1, max(2, sum(g.reward))))
    try:
        sol = kmst_exact(g, k)
    except InfeasibleError:
        return
    assert verify_tree(g, sol, k) == (True, [])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_heuristic_feasible_and_no_better_than_exact(seed):
    rng = np.random.default_rng(seed)
    g = random_kmst_graph(rng, int(rng.integers(2, 13)), p_edge=0.4)
    k = int(rng.integers(1, max(2, sum(g.reward))))
    try:
        exact = kmst_exact(g, k)
    except InfeasibleError:
        with pytest.raises(InfeasibleError):
            kmst_heuristic(g, k)
        return
    try:
        heur = kmst_heuristic(g, k)
    except InfeasibleError:
        # greedy growth can strand itself; it must never claim a tree it lacks
        return
    assert verify_tree(g, heur, k)[0]
    assert heur.objective >= exact.objective


def test_heuristic_star():
    g = KmstGraph((1, 1, 1, 1, 1), {(0, 1): 0, (0, 2): 0, (0, 3): 0, (0, 4): 0})
    sol = kmst_heuristic(g, 3)
    assert sol.objective == 0 and 0 in sol.vertices and sol.reward >= 3


def test_monotone_in_k():
    rng = np.random.default_rng(9)
    for _ in range(40):
        g = random_kmst_graph(rng, 6)
        prev = None
        for k in range(1, sum(g.reward) + 1):
            try:
                obj = kmst_exact(g, k).objective
            except InfeasibleError:
                break
            if prev is not None:
                assert obj >= prev
            prev = obj


def test_verify_flags_dropped_edge(triangle):
    sol = kmst_exact(triangle, 3)
    broken = TreeSolution(sol.vertices, frozenset(list(sol.edges)[:1]), sol.objective, sol.reward)
    ok, problems = verify_tree(triangle, broken, 3)
    assert not ok and "disconnected" in problems


def test_verify_flags_tampered_objective(triangle):
    sol = kmst_exact(triangle, 3)
    bad = TreeSolution(sol.vertices, sol.edges, sol.objective + 1, sol.reward)
    ok, problems = verify_tree(triangle, bad, 3)
    assert not ok and any("objective mismatch" in p for p in problems)


def test_verify_flags_cycle_and_missing_requirement():
    g = KmstGraph((1, 1, 1), {(0, 1): 1, (1, 2): 1, (0, 2): 1},
                  requires=((), (), frozenset({0})))
    sol = TreeSolution(frozenset({0, 1, 2}), frozenset({(0, 1), (1, 2), (0, 2)}), 3, 3)
    ok, problems = verify_tree(g, sol, 3)
    assert "cycle" in problems
    sol = TreeSolution(frozenset({1, 2}), frozenset({(1, 2)}), 1, 2)
    ok, problems = verify_tree(g, sol, 2)
    assert any("missing required" in p for p in problems)
