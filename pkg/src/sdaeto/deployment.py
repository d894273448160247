"""Popularity-driven edge service deployment.

``solve_deployment`` turns a catalog, candidate server placements and a
required edge offloading rate into a :class:`DeploymentPlan`: the servers
spanned by a minimum-storage tree of the AD-graph whose services reach the
rate, with microservices shared along tree edges stored once.
"""

from __future__ import annotations

import json
import math
import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping

from .adgraph import (AdGraph, MecServer, approx_storage, build_ad_graph, integer_quota,
                      kmst_from_quota)
from .catalog import TOL, ServiceCatalog, hit_rate
from .errors import InfeasibleError, InstanceTooLargeError
from .kmst import EXACT_LIMIT, TreeSolution, kmst_exact, kmst_heuristic

__all__ = ["DeploymentPlan", "solve_deployment", "deredundancy_degree", "plan_from_servers"]

log = logging.getLogger(__name__)

MAX_COMPONENTS = 8


def deredundancy_degree(footprint: int, redundant: int) -> float:
    """``(footprint - redundant) / footprint``."""
    if footprint <= 0:
        raise ValueError("de-redundancy degree undefined for an empty footprint")
    if not 0 <= redundant <= footprint:
        raise ValueError(f"redundant storage {redundant} outside [0, {footprint}]")
    return (footprint - redundant) / footprint


@dataclass(frozen=True)
class DeploymentPlan:
    """Servers chosen for caching and what each of them keeps.

    ``achieved_rate`` is the popularity mass of the distinct services held
    by the chosen servers; ``quota_reward`` is the sum of the per-server
    rewards the tree search optimized, which counts a service once per
    server holding it.
    """

    required_rate: float
    chosen_servers: tuple
    tree_edges: tuple
    edge_microservices: Mapping[str, frozenset]
    edge_services: frozenset
    cloud_set: frozenset
    footprint: int
    redundant: int
    achieved_rate: float
    quota_reward: float = 0.0
    capacity: int = 0
    solver: str = "exact"
    trees: tuple = field(default=(), compare=False)

    @property
    def theta(self):
        """De-redundancy degree, or None when it is undefined.

        Tree-edge overlaps can add up past the footprint when a microservice
        sits on three or more chosen servers; θ is left undefined then.
        """
        if self.footprint <= 0 or self.redundant > self.footprint:
            return None
        return deredundancy_degree(self.footprint, self.redundant)

    def hosts(self, microservice) -> list:
        return [s for s in self.chosen_servers if microservice in self.edge_microservices[s]]

    def to_dict(self) -> dict:
        return {
            "required_rate": self.required_rate,
            "servers": list(self.chosen_servers),
            "tree_edges": [list(e) for e in self.tree_edges],
            "microservices": {s: sorted(self.edge_microservices[s]) for s in self.chosen_servers},
            "services": sorted(self.edge_services),
            "footprint": self.footprint,
            "redundant": self.redundant,
            "achieved_rate": self.achieved_rate,
            "quota_reward": self.quota_reward,
            "theta": self.theta,
            "solver": self.solver,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping, catalog: ServiceCatalog | None = None) -> "DeploymentPlan":
        servers = tuple(data["servers"])
        micro = {s: frozenset(data["microservices"].get(s, ())) for s in servers}
        return cls(
            required_rate=float(data.get("required_rate", 0.0)),
            chosen_servers=servers,
            tree_edges=tuple(tuple(e) for e in data.get("tree_edges", ())),
            edge_microservices=micro,
            edge_services=frozenset(data.get("services", ())),
            cloud_set=frozenset(catalog.ids) if catalog is not None else frozenset(),
            footprint=int(data.get("footprint", 0)),
            redundant=int(data.get("redundant", 0)),
            achieved_rate=float(data.get("achieved_rate", 0.0)),
            quota_reward=float(data.get("quota_reward", 0.0)),
            solver=data.get("solver", "exact"),
        )


def _solve_instance(inst, exact_limit):
    try:
        return kmst_exact(inst, inst.k_target, exact_limit=exact_limit), "exact"
    except InstanceTooLargeError:
        return kmst_heuristic(inst, inst.k_target), "heuristic"


def _decode(inst, sol: TreeSolution):
    nodes = {inst.origin[v] for v in sol.vertices if inst.kind[v] == "node"}
    edges = []
    for u, v in sol.edges:
        if inst.kind[u] == "node" and inst.kind[v] == "node":
            edges.append((inst.origin[u], inst.origin[v]))
    return nodes, edges


def _component_curve(sub: AdGraph, quota: int, scale: int, exact_limit: int):
    """Cheapest tree for every reachable reward level up to ``quota``.

    Returns options ``(reward, cost, nodes, edges, solver, tree)`` starting
    with the empty choice.
    """
    options = [(0, 0, frozenset(), (), None, None)]
    r_hat = kmst_from_quota(sub, 0, scale).int_rewards
    cap = min(quota, sum(r_hat.values()))
    q = 1
    while q <= cap:
        inst = kmst_from_quota(sub, q, scale)
        sol, how = _solve_instance(inst, exact_limit)
        nodes, edges = _decode(inst, sol)
        got = sum(r_hat[v] for v in nodes)
        options.append((got, sol.objective, frozenset(nodes), tuple(edges), how, sol))
        q = got + 1
    return options


def _solve_quota(graph: AdGraph, quota: int, scale: int, exact_limit: int):
    comps = [c for c in graph.components()]
    pos = {v: i for i, v in enumerate(graph.nodes)}
    if len(comps) == 1:
        inst = kmst_from_quota(graph, quota, scale)
        sol, how = _solve_instance(inst, exact_limit)
        nodes, edges = _decode(inst, sol)
        return nodes, edges, sol.objective, how, (sol,)
    if len(comps) > MAX_COMPONENTS:
        raise InfeasibleError(
            f"AD-graph has {len(comps)} components; at most {MAX_COMPONENTS} are combined")
    curves = []
    for comp in comps:
        curves.append(_component_curve(graph.subgraph(comp), quota, scale, exact_limit))
    best = None
    for combo in product(*curves):
        if sum(o[0] for o in combo) < quota:
            continue
        nodes = frozenset().union(*(o[2] for o in combo))
        key = (sum(o[1] for o in combo), len(nodes), tuple(sorted(pos[v] for v in nodes)))
        if best is None or key < best[0]:
            best = (key, combo)
    if best is None:
        raise InfeasibleError("required rate unreachable")
    combo = best[1]
    nodes = set().union(*(o[2] for o in combo))
    edges = [e for o in combo for e in o[3]]
    hows = {o[4] for o in combo if o[4]}
    how = "heuristic" if "heuristic" in hows else "exact"
    return nodes, edges, best[0][0], how, tuple(o[5] for o in combo if o[5] is not None)


def _forest_storage(graph: AdGraph, nodes, edges) -> int:
    total = 0
    sub = graph.subgraph(nodes)
    for comp in sub.components():
        cs = set(comp)
        total += approx_storage(graph, comp, [e for e in edges if e[0] in cs])
    return total


def _attribute(graph: AdGraph, chosen, edges, catalog):
    """Store each tree edge's shared microservices once.

    The copy stays on the endpoint with more spare capacity (ties: smaller
    server id); the other endpoint drops it.
    """
    pos = {v: i for i, v in enumerate(graph.nodes)}
    kept = {s: set(graph.microservices[s]) for s in chosen}
    for a, b in sorted(edges, key=lambda e: (pos[e[0]], pos[e[1]])):
        shared = graph.microservices[a] & graph.microservices[b]
        spare = {s: graph.capacity[s] - catalog.storage(kept[s]) for s in (a, b)}
        first, second = (a, b) if a < b else (b, a)
        owner = first if spare[first] >= spare[second] else second
        other = second if owner == first else first
        kept[other] -= shared
    for s in chosen:
        load = catalog.storage(kept[s])
        if load > graph.capacity[s]:
            log.warning("server %s over capacity after attribution: %d > %d",
                        s, load, graph.capacity[s])
    return {s: frozenset(kept[s]) for s in chosen}


def _plan(graph, catalog, required_rate, nodes, edges, how, trees):
    pos = {v: i for i, v in enumerate(graph.nodes)}
    chosen = tuple(sorted(nodes, key=pos.get))
    edges = tuple(sorted((graph.key(a, b) for a, b in edges), key=lambda e: (pos[e[0]], pos[e[1]])))
    footprint = _forest_storage(graph, chosen, edges) if chosen else 0
    redundant = -sum(graph.edges[e] for e in edges)
    cap = sum(graph.capacity.get(s, 0) for s in chosen)
    if footprint > cap:
        raise InfeasibleError(f"capacity infeasible: footprint {footprint} > capacity {cap}")
    services = frozenset().union(*(graph.services.get(s, frozenset()) for s in chosen))
    return DeploymentPlan(
        required_rate=required_rate,
        chosen_servers=chosen,
        tree_edges=edges,
        edge_microservices=_attribute(graph, chosen, edges, catalog),
        edge_services=services,
        cloud_set=frozenset(catalog.ids),
        footprint=footprint,
        redundant=redundant,
        achieved_rate=hit_rate(catalog, services),
        quota_reward=math.fsum(graph.reward[s] for s in chosen),
        capacity=cap,
        solver=how,
        trees=trees,
    )


def solve_deployment(catalog: ServiceCatalog, servers: Iterable[MecServer], required_rate: float,
                     scale: int = 1000, exact_limit: int = EXACT_LIMIT) -> DeploymentPlan:
    """Minimum-storage server tree whose distinct services reach ``required_rate``.

    The tree search optimizes per-server rewards, which count a service
    once per server holding it. When the distinct services of the result
    fall short of the rate, the integer quota is raised by the shortfall
    and the search repeats.
    """
    if not 0.0 <= required_rate <= 1.0:
        raise ValueError(f"required rate {required_rate} outside [0, 1]")
    graph = build_ad_graph(servers, catalog)
    quota = integer_quota(required_rate, scale)
    total = sum(kmst_from_quota(graph, 0, scale).int_rewards.values())
    while True:
        if quota == 0:
            nodes, edges, how, trees = set(), [], "exact", ()
        else:
            if quota > total:
                raise InfeasibleError(
                    f"required rate unreachable: {required_rate} needs quota {quota}, "
                    f"candidates offer {total}")
            nodes, edges, _, how, trees = _solve_quota(graph, quota, scale, exact_limit)
        plan = _plan(graph, catalog, required_rate, nodes, edges, how, trees)
        if plan.achieved_rate >= required_rate - TOL:
            return plan
        quota = max(quota + 1, quota + integer_quota(required_rate - plan.achieved_rate, scale))


def plan_from_servers(catalog: ServiceCatalog, servers: Iterable[MecServer],
                      required_rate: float = 0.0) -> DeploymentPlan:
    """Plan that keeps every candidate placement as is, without de-duplication."""
    servers = list(servers)
    micro = {s.id: s.microservices(catalog) for s in servers}
    services = frozenset().union(*(s.placed_services for s in servers)) if servers else frozenset()
    footprint = sum(catalog.storage(m) for m in micro.values())
    return DeploymentPlan(
        required_rate=required_rate,
        chosen_servers=tuple(s.id for s in servers),
        tree_edges=(),
        edge_microservices=micro,
        edge_services=services,
        cloud_set=frozenset(catalog.ids),
        footprint=footprint,
        redundant=0,
        achieved_rate=hit_rate(catalog, services),
        quota_reward=math.fsum(catalog.popularity(x) for s in servers for x in s.placed_services),
        capacity=sum(s.capacity for s in servers),
        solver="none",
    )
