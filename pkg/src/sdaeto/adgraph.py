"""Approximate deployment graph and its reduction to a k-MST instance.

Nodes are MEC servers weighted by the storage of their candidate
microservices and carrying the popularity mass of their services as a
quota reward. An edge joins two servers that share microservices and has
weight ``-A`` with ``A`` the shared storage, so node weights plus tree edge
weights estimate the de-duplicated storage of a connected server group.

``to_kmst_instance`` rewrites the quota problem as a k-MST problem: every
server gets a pendant auxiliary vertex holding its (integerized) reward,
connected by an edge of weight ``V_i``; rewards are then stretched to
``2|V*|P + 1`` and the quota to ``2|V*|R`` so that counting vertices can
never substitute for collecting reward. A server and its auxiliary vertex
require each other, which keeps a lone auxiliary vertex from claiming a
reward without paying for the server's storage.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .catalog import ServiceCatalog, TOL
from .errors import InfeasibleError

__all__ = [
    "MecServer",
    "AdGraph",
    "KmstGraph",
    "build_ad_graph",
    "approx_storage",
    "storage_before_deredundancy",
    "integer_quota",
    "to_kmst_instance",
    "kmst_from_quota",
    "star_expand",
    "to_dot",
]


@dataclass(frozen=True)
class MecServer:
    """A MEC server and the services it is a candidate host for.

    ``placed_microservices`` defaults to the union of the placed services'
    microservices; it can be given explicitly for fixtures that host
    microservices without their full parent service.
    """

    id: str
    capacity: int
    placed_services: frozenset = frozenset()
    placed_microservices: frozenset | None = None

    def __post_init__(self):
        object.__setattr__(self, "placed_services", frozenset(self.placed_services))
        if self.placed_microservices is not None:
            object.__setattr__(self, "placed_microservices",
                               frozenset(self.placed_microservices))
        if self.capacity < 0:
            raise ValueError(f"server {self.id!r} has negative capacity")

    def microservices(self, catalog: ServiceCatalog) -> frozenset:
        derived = catalog.microservices_of(self.placed_services)
        if self.placed_microservices is None:
            return derived
        return self.placed_microservices | derived


def _edge(u, v):
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class AdGraph:
    """Undirected server graph.

    ``nodes`` fixes the node order; ``edges`` maps ordered id pairs (by
    position in ``nodes``) to the negative shared storage.
    """

    nodes: tuple
    weight: Mapping[str, int]
    reward: Mapping[str, float]
    edges: Mapping[tuple, int]
    microservices: Mapping[str, frozenset] = field(default_factory=dict)
    services: Mapping[str, frozenset] = field(default_factory=dict)
    capacity: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        pos = {n: i for i, n in enumerate(self.nodes)}
        edges = {}
        for (u, v), w in self.edges.items():
            if u == v:
                raise ValueError(f"self loop on {u!r}")
            a, b = (u, v) if pos[u] < pos[v] else (v, u)
            edges[(a, b)] = int(w)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_pos", pos)

    def key(self, u, v):
        return (u, v) if self._pos[u] < self._pos[v] else (v, u)

    def edge_weight(self, u, v):
        return self.edges.get(self.key(u, v))

    def neighbors(self, u):
        for a, b in self.edges:
            if a == u:
                yield b
            elif b == u:
                yield a

    def components(self):
        """Connected components as tuples of node ids in node order."""
        adj = {n: [] for n in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen, comps = set(), []
        for n in self.nodes:
            if n in seen:
                continue
            comp, todo = set(), deque([n])
            seen.add(n)
            while todo:
                x = todo.popleft()
                comp.add(x)
                for y in adj[x]:
                    if y not in seen:
                        seen.add(y)
                        todo.append(y)
            comps.append(tuple(m for m in self.nodes if m in comp))
        return comps

    def subgraph(self, nodes: Iterable) -> "AdGraph":
        keep = set(nodes)
        order = tuple(n for n in self.nodes if n in keep)
        return AdGraph(
            order,
            {n: self.weight[n] for n in order},
            {n: self.reward[n] for n in order},
            {e: w for e, w in self.edges.items() if e[0] in keep and e[1] in keep},
            {n: self.microservices[n] for n in order if n in self.microservices},
            {n: self.services[n] for n in order if n in self.services},
            {n: self.capacity[n] for n in order if n in self.capacity},
        )


def build_ad_graph(servers: Iterable[MecServer], catalog: ServiceCatalog) -> AdGraph:
    servers = list(servers)
    ids = [s.id for s in servers]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate server ids")
    weight, reward, micro, svc, cap = {}, {}, {}, {}, {}
    for s in servers:
        for sid in s.placed_services:
            if sid not in catalog:
                raise KeyError(f"server {s.id!r} references unknown service {sid!r}")
        ms = s.microservices(catalog)
        weight[s.id] = catalog.storage(ms)
        if weight[s.id] > s.capacity:
            raise ValueError(
                f"server {s.id!r} holds {weight[s.id]} units over capacity {s.capacity}")
        reward[s.id] = math.fsum(catalog.popularity(x) for x in s.placed_services)
        micro[s.id] = ms
        svc[s.id] = s.placed_services
        cap[s.id] = s.capacity
    edges = {}
    for i, a in enumerate(servers):
        for b in servers[i + 1:]:
            shared = catalog.storage(micro[a.id] & micro[b.id])
            if shared > 0:
                edges[(a.id, b.id)] = -shared
    return AdGraph(tuple(ids), weight, reward, edges, micro, svc, cap)


def _tree_check(nodes, edges, adjacency_ok):
    """Raise ValueError unless ``edges`` form a spanning tree on ``nodes``."""
    nodes = set(nodes)
    for u, v in edges:
        if u not in nodes or v not in nodes:
            raise ValueError(f"edge ({u!r}, {v!r}) leaves the selected node set")
        if not adjacency_ok(u, v):
            raise ValueError(f"edge ({u!r}, {v!r}) is not in the graph")
    if not nodes:
        if edges:
            raise ValueError("edges selected without nodes")
        return
    if len(edges) != len(nodes) - 1:
        kind = "cyclic" if len(edges) >= len(nodes) else "disconnected"
        raise ValueError(f"{kind} selection: {len(nodes)} nodes, {len(edges)} edges")
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru == rv:
            raise ValueError("cyclic selection")
        parent[ru] = rv


def approx_storage(graph: AdGraph, nodes: Iterable, edges: Iterable = ()) -> int:
    """Node weights plus (negative) edge weights over a spanning tree."""
    nodes = list(dict.fromkeys(nodes))
    edges = [graph.key(u, v) for u, v in edges]
    if len(set(edges)) != len(edges):
        raise ValueError("cyclic selection: repeated edge")
    _tree_check(nodes, edges, lambda u, v: graph.edge_weight(u, v) is not None)
    return sum(graph.weight[n] for n in nodes) + sum(graph.edges[e] for e in edges)


def storage_before_deredundancy(services: Iterable, catalog: ServiceCatalog | None = None) -> int:
    """Storage of the services counted independently (shared parts repeated)."""
    size = catalog.size_of if catalog is not None else (lambda m: 1)
    return sum(size(m) for s in services for m in s.microservices)


@dataclass(frozen=True)
class KmstGraph:
    """Vertex-rewarded, edge-weighted graph for the k-MST solvers.

    Vertices are the integers ``0..n-1``. ``requires[v]`` lists vertices that
    must be in any tree containing ``v``. ``kind`` is one of ``"node"``,
    ``"aux"``, ``"hub"``, ``"spoke"`` or ``"plain"``; ``origin`` names the
    AD-graph node a vertex stems from (``None`` for plain graphs).
    """

    reward: tuple
    edges: Mapping[tuple, int]
    requires: tuple = ()
    kind: tuple = ()
    origin: tuple = ()
    aggregated: bool = True
    k_target: int = 0
    scale: int = 1
    quota: int = 0
    int_rewards: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.reward)
        object.__setattr__(self, "reward", tuple(int(r) for r in self.reward))
        if any(r < 0 for r in self.reward):
            raise ValueError("rewards must be non-negative")
        edges = {}
        for (u, v), w in self.edges.items():
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ValueError(f"bad edge ({u}, {v})")
            edges[_edge(u, v)] = int(w)
        object.__setattr__(self, "edges", edges)
        req = tuple(frozenset(r) for r in self.requires) or tuple(frozenset() for _ in range(n))
        kind = tuple(self.kind) or ("plain",) * n
        origin = tuple(self.origin) or (None,) * n
        if not (len(req) == len(kind) == len(origin) == n):
            raise ValueError("per-vertex attribute lengths disagree")
        object.__setattr__(self, "requires", req)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "origin", origin)

    @property
    def n(self):
        return len(self.reward)

    def adjacency(self):
        adj = [[] for _ in range(self.n)]
        for (u, v), w in self.edges.items():
            adj[u].append((v, w))
            adj[v].append((u, w))
        return adj


def integer_quota(required_rate: float, scale: int) -> int:
    # tolerance absorbs products such as 0.29 * 100 = 28.999999999999996
    return max(0, math.ceil(scale * required_rate - TOL))


def _int_reward(r: float, scale: int) -> int:
    return max(0, math.floor(scale * r + TOL))


def to_kmst_instance(graph: AdGraph, required_rate: float, scale: int = 1000) -> KmstGraph:
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if not 0.0 <= required_rate <= 1.0:
        raise ValueError(f"required rate {required_rate} outside [0, 1]")
    return kmst_from_quota(graph, integer_quota(required_rate, scale), scale)


def kmst_from_quota(graph: AdGraph, quota: int, scale: int = 1000) -> KmstGraph:
    """Build the k-MST instance for an already integerized quota."""
    n = len(graph.nodes)
    r_hat = {v: _int_reward(graph.reward[v], scale) for v in graph.nodes}
    if quota > sum(r_hat.values()):
        raise InfeasibleError(
            f"required rate unreachable: quota {quota} > total reward {sum(r_hat.values())}")
    size = 2 * n  # |V*|: originals plus one auxiliary vertex each
    pos = {v: i for i, v in enumerate(graph.nodes)}
    rewards = [1] * n + [2 * size * r_hat[v] + 1 for v in graph.nodes]
    edges = {(pos[a], pos[b]): w for (a, b), w in graph.edges.items()}
    for v in graph.nodes:
        edges[(pos[v], n + pos[v])] = graph.weight[v]
    requires = [frozenset({n + i}) for i in range(n)] + [frozenset({i}) for i in range(n)]
    return KmstGraph(
        reward=tuple(rewards),
        edges=edges,
        requires=tuple(requires),
        kind=("node",) * n + ("aux",) * n,
        origin=graph.nodes + graph.nodes,
        aggregated=True,
        k_target=2 * quota * size,
        scale=scale,
        quota=quota,
        int_rewards=r_hat,
    )


def star_expand(graph: KmstGraph) -> KmstGraph:
    """Materialize every multi-unit reward as a hub with zero-weight spokes.

    A vertex of reward ``rho > 1`` keeps reward 1 and gains ``rho - 1``
    pendant spokes of reward 1, each requiring the hub.
    """
    if not graph.aggregated:
        raise ValueError("graph is already materialized")
    reward = list(graph.reward)
    kind = list(graph.kind)
    origin = list(graph.origin)
    requires = list(graph.requires)
    edges = dict(graph.edges)
    for v in range(graph.n):
        rho = graph.reward[v]
        if rho <= 1:
            continue
        reward[v] = 1
        if kind[v] == "aux":
            kind[v] = "hub"
        for _ in range(rho - 1):
            s = len(reward)
            reward.append(1)
            kind.append("spoke")
            origin.append(graph.origin[v])
            requires.append(frozenset({v}))
            edges[(v, s)] = 0
    return KmstGraph(tuple(reward), edges, tuple(requires), tuple(kind), tuple(origin),
                     aggregated=False, k_target=graph.k_target, scale=graph.scale,
                     quota=graph.quota, int_rewards=graph.int_rewards)


def to_dot(graph) -> str:
    """Graphviz rendering of an ``AdGraph`` or ``KmstGraph``."""
    lines = ["graph G {"]
    if isinstance(graph, AdGraph):
        for v in graph.nodes:
            lines.append(f'  "{v}" [label="V={graph.weight[v]},r={graph.reward[v]:g}"];')
        for (a, b), w in graph.edges.items():
            lines.append(f'  "{a}" -- "{b}" [label="{w}"];')
    else:
        for v in range(graph.n):
            name = f"{graph.kind[v]}:{graph.origin[v]}" if graph.origin[v] is not None else str(v)
            lines.append(f'  {v} [label="{name} P={graph.reward[v]}"];')
        for (a, b), w in graph.edges.items():
            lines.append(f'  {a} -- {b} [label="{w}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
