"""k-MST solvers: exact branch-and-bound, greedy heuristic, and a checker.

A solution is a tree whose vertex rewards add up to at least ``k`` and whose
edge weights (possibly negative) add up to as little as possible. Vertices
listed in ``KmstGraph.requires`` must accompany their dependents.

Both solvers first fold pendant vertices into their single neighbour when
the pendant requires exactly that neighbour and nobody but the neighbour
requires it, and either the edge is non-positive (the pendant never hurts
a tree holding the neighbour) or the neighbour requires the pendant back
(the two always travel together). Both folds are exact; they shrink star
graphs and node/auxiliary pairs to one vertex each.
"""

from __future__ import annotations

from dataclasses import dataclass

from .adgraph import KmstGraph
from .errors import InfeasibleError, InstanceTooLargeError

__all__ = ["TreeSolution", "kmst_exact", "kmst_heuristic", "verify_tree", "EXACT_LIMIT"]

EXACT_LIMIT = 16


@dataclass(frozen=True)
class TreeSolution:
    vertices: frozenset
    edges: frozenset
    objective: int
    reward: int

    @classmethod
    def empty(cls):
        return cls(frozenset(), frozenset(), 0, 0)


class _Reduced:
    """Graph after pendant folding, re-indexed compactly for bitmask work."""

    def __init__(self, graph: KmstGraph):
        n = graph.n
        adj = [dict() for _ in range(n)]
        for (u, v), w in graph.edges.items():
            adj[u][v] = w
            adj[v][u] = w
        reqs = [set(graph.requires[v]) for v in range(n)]
        req_by = [set() for _ in range(n)]
        for v in range(n):
            for r in reqs[v]:
                req_by[r].add(v)
        alive = [True] * n
        reward = list(graph.reward)
        bonus = [0] * n
        members = [[v] for v in range(n)]
        folded = [[] for _ in range(n)]
        todo = list(range(n))
        while todo:
            u = todo.pop()
            if not alive[u] or len(adj[u]) != 1:
                continue
            (v, w), = adj[u].items()
            if reqs[u] != {v} or not req_by[u] <= {v}:
                continue
            # a free non-positive pendant, or a pair that always travels together
            if w > 0 and v not in req_by[u]:
                continue
            alive[u] = False
            reward[v] += reward[u]
            bonus[v] += bonus[u] + w
            members[v].extend(members[u])
            folded[v].extend(folded[u])
            folded[v].append((min(u, v), max(u, v)))
            del adj[v][u]
            req_by[v].discard(u)
            reqs[v].discard(u)
            todo.append(v)

        self.keep = [v for v in range(n) if alive[v]]
        index = {v: i for i, v in enumerate(self.keep)}
        self.m = len(self.keep)
        self.reward = [reward[v] for v in self.keep]
        self.bonus = [bonus[v] for v in self.keep]
        self.members = [members[v] for v in self.keep]
        self.folded = [folded[v] for v in self.keep]
        self.adjmask = [0] * self.m
        self.reqmask = [0] * self.m
        self.adj = [dict() for _ in range(self.m)]
        edges = []
        for (u, v), w in graph.edges.items():
            if u in index and v in index:
                a, b = index[u], index[v]
                self.adjmask[a] |= 1 << b
                self.adjmask[b] |= 1 << a
                self.adj[a][b] = w
                self.adj[b][a] = w
                edges.append((w, min(a, b), max(a, b)))
        edges.sort()
        self.edges = edges
        self.neg_edges = [e for e in edges if e[0] < 0]
        for v in self.keep:
            for r in reqs[v]:
                self.reqmask[index[v]] |= 1 << index[r]

    def bits(self, mask):
        i = 0
        while mask:
            if mask & 1:
                yield i
            mask >>= 1
            i += 1

    def kruskal(self, mask, edges=None):
        """Minimum spanning forest restricted to ``mask``: ``(weight, edges)``."""
        parent = {}

        def find(x):
            while parent.get(x, x) != x:
                x = parent[x]
            return x

        total, chosen = 0, []
        for w, a, b in (self.edges if edges is None else edges):
            if not (mask >> a) & 1 or not (mask >> b) & 1:
                continue
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
                total += w
                chosen.append((a, b))
        return total, chosen

    def key(self, objective, mask):
        verts = sorted(x for i in self.bits(mask) for x in self.members[i])
        return (objective, len(verts), tuple(verts))

    def solution(self, mask, tree_edges, graph: KmstGraph) -> TreeSolution:
        verts, edges = set(), set()
        for i in self.bits(mask):
            verts.update(self.members[i])
            edges.update(self.folded[i])
        for a, b in tree_edges:
            u, v = self.keep[a], self.keep[b]
            edges.add((min(u, v), max(u, v)))
        objective = sum(graph.edges[e] for e in edges)
        reward = sum(graph.reward[v] for v in verts)
        return TreeSolution(frozenset(verts), frozenset(edges), objective, reward)


def kmst_exact(graph: KmstGraph, k: int, exact_limit: int = EXACT_LIMIT) -> TreeSolution:
    """Minimum-weight tree with reward at least ``k``, by exhaustive search.

    Connected vertex sets are enumerated once each (ESU-style extension
    sets rooted at their smallest vertex). A branch is cut when the reward
    still reachable cannot hit ``k``, or when the most negative forest on
    the reachable vertices cannot beat the incumbent. Each surviving
    feasible set is priced by its minimum spanning tree. Ties go to fewer
    vertices, then to the lexicographically smallest vertex sequence.
    """
    if k <= 0:
        return TreeSolution.empty()
    red = _Reduced(graph)
    if red.m > exact_limit:
        raise InstanceTooLargeError(
            f"{red.m} vertices exceed the exact limit {exact_limit}; use kmst_heuristic")
    m = red.m
    full = (1 << m) - 1
    rew, bonus, adjm, reqm = red.reward, red.bonus, red.adjmask, red.reqmask
    best = [None, None]  # key, (mask, edges)

    def mask_sum(values, mask):
        s, i = 0, 0
        while mask:
            if mask & 1:
                s += values[i]
            mask >>= 1
            i += 1
        return s

    def reachable(start, allowed):
        seen, frontier = start, start
        while frontier:
            nxt = 0
            for i in red.bits(frontier):
                nxt |= adjm[i]
            frontier = nxt & allowed & ~seen
            seen |= frontier
        return seen

    def evaluate(S, reward):
        if reward < k:
            return
        for i in red.bits(S):
            if reqm[i] & ~S:
                return
        w, tree = red.kruskal(S)
        obj = w + mask_sum(bonus, S)
        key = red.key(obj, S)
        if best[0] is None or key < best[0]:
            best[0], best[1] = key, (S, tree)

    def extend(S, reward, ext, nbhd, above):
        pool = reachable(ext, (above & ~nbhd) | ext) if ext else 0
        if reward + mask_sum(rew, pool) < k:
            return
        if best[0] is not None:
            region = S | pool
            lb = red.kruskal(region, red.neg_edges)[0] + sum(
                min(bonus[i], 0) for i in red.bits(region))
            if lb > best[0][0]:
                return
        evaluate(S, reward)
        while ext:
            low = ext & -ext
            w = low.bit_length() - 1
            ext &= ~low
            new_ext = ext | (adjm[w] & above & ~nbhd)
            extend(S | low, reward + rew[w], new_ext, nbhd | adjm[w] | low, above)

    for root in range(m):
        above = full & ~((1 << (root + 1)) - 1)
        bit = 1 << root
        extend(bit, rew[root], adjm[root] & above, adjm[root] | bit, above)

    if best[0] is None:
        raise InfeasibleError(f"no subtree reaches reward {k}")
    mask, tree = best[1]
    return red.solution(mask, tree, graph)


def _closure_cost(red: _Reduced, S: int, v: int):
    """Attach ``v`` plus everything it transitively requires; (cost, gain, mask).

    Each vertex hangs off its cheapest edge into the growing set. Returns
    ``None`` when some requirement cannot be attached.
    """
    cur, added, cost, gain = S, 0, 0, 0
    pending = [v]
    while pending:
        progress, rest = False, []
        for x in pending:
            if (cur >> x) & 1:
                continue
            links = [w for y, w in red.adj[x].items() if (cur >> y) & 1]
            if cur and not links:
                rest.append(x)
                continue
            cost += (min(links) if links else 0) + red.bonus[x]
            gain += red.reward[x]
            cur |= 1 << x
            added |= 1 << x
            progress = True
            rest.extend(r for r in red.bits(red.reqmask[x]) if not (cur >> r) & 1)
        if rest and not progress:
            return None
        pending = list(dict.fromkeys(rest))
    return cost, gain, added


def kmst_heuristic(graph: KmstGraph, k: int) -> TreeSolution:
    """Best-ratio greedy growth from every start vertex.

    From each start, repeatedly attach the frontier vertex (with whatever it
    requires) that adds the least edge weight per unit of new reward;
    additions that lower the weight without adding reward are taken first.
    The final vertex set is re-priced by its minimum spanning tree and the
    best start wins. No approximation ratio is claimed.
    """
    if k <= 0:
        return TreeSolution.empty()
    red = _Reduced(graph)
    best = None
    for start in range(red.m):
        first = _closure_cost(red, 0, start)
        if first is None:
            continue
        _, reward, S = first
        while reward < k:
            frontier = 0
            for i in red.bits(S):
                frontier |= red.adjmask[i]
            frontier &= ~S
            choice = None
            for v in red.bits(frontier):
                trial = _closure_cost(red, S, v)
                if trial is None:
                    continue
                cost, gain, added = trial
                if gain > 0:
                    score = (1, cost / gain, v)
                elif cost < 0:
                    score = (0, cost, v)
                else:
                    continue
                if choice is None or score < choice[0]:
                    choice = (score, gain, added)
            if choice is None:
                break
            _, gain, added = choice
            S |= added
            reward += gain
        if reward < k:
            continue
        w, tree = red.kruskal(S)
        if len(tree) != bin(S).count("1") - 1:
            continue
        obj = w + sum(red.bonus[i] for i in red.bits(S))
        key = red.key(obj, S)
        if best is None or key < best[0]:
            best = (key, S, tree)
    if best is None:
        raise InfeasibleError(f"no subtree reaches reward {k}")
    return red.solution(best[1], best[2], graph)


def verify_tree(graph: KmstGraph, sol: TreeSolution, k: int):
    """Check a claimed solution; returns ``(ok, problems)``."""
    problems = []
    verts = set(sol.vertices)
    bad = [v for v in verts if not 0 <= v < graph.n]
    if bad:
        problems.append(f"unknown vertices {sorted(bad)}")
        return False, problems
    edges = set()
    for u, v in sol.edges:
        e = (min(u, v), max(u, v))
        if e not in graph.edges:
            problems.append(f"edge {e} not in graph")
        elif u not in verts or v not in verts:
            problems.append(f"edge {e} leaves the vertex set")
        else:
            edges.add(e)
    if verts:
        parent = {v: v for v in verts}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        cyclic = False
        for u, v in edges:
            ru, rv = find(u), find(v)
            if ru == rv:
                cyclic = True
            else:
                parent[ru] = rv
        if cyclic:
            problems.append("cycle")
        if len({find(v) for v in verts}) > 1:
            problems.append("disconnected")
    elif sol.edges:
        problems.append("edges without vertices")
    for v in verts:
        missing = graph.requires[v] - verts
        if missing:
            problems.append(f"vertex {v} missing required {sorted(missing)}")
    reward = sum(graph.reward[v] for v in verts)
    if reward != sol.reward:
        problems.append(f"reward mismatch: recorded {sol.reward}, actual {reward}")
    if reward < k:
        problems.append(f"reward {reward} below k={k}")
    objective = sum(graph.edges[e] for e in edges)
    if objective != sol.objective:
        problems.append(f"objective mismatch: recorded {sol.objective}, actual {objective}")
    return not problems, problems
