"""Two servers sharing two microservices: graph, reduction, plan.

Run: python3 demos/deploy_walkthrough.py
"""

from sdaeto.adgraph import MecServer, build_ad_graph, star_expand, to_dot, to_kmst_instance
from sdaeto.catalog import Service, ServiceCatalog
from sdaeto.deployment import solve_deployment
from sdaeto.kmst import kmst_exact

catalog = ServiceCatalog((
    Service("sa", 0.6, frozenset({"m1", "m2", "m3"})),
    Service("sb", 0.4, frozenset({"m2", "m3", "m4"})),
))
servers = [MecServer("M1", 3, {"sa"}), MecServer("M2", 3, {"sb"})]

graph = build_ad_graph(servers, catalog)
print("AD-graph")
print(to_dot(graph))

for rate in (0.0, 0.5, 0.9):
    inst = to_kmst_instance(graph, rate, scale=10)
    print(f"\nrate {rate}: k-MST instance with {inst.n} vertices, k = {inst.k_target}")
    if inst.k_target:
        sol = kmst_exact(inst, inst.k_target)
        big = star_expand(inst)
        same = kmst_exact(big, big.k_target).objective == sol.objective
        print(f"  tree weight {sol.objective}; materialized star graph has {big.n} vertices,"
              f" same weight: {same}")
    plan = solve_deployment(catalog, servers, rate, scale=10)
    print(f"  servers {list(plan.chosen_servers)}  footprint {plan.footprint}"
          f"  achieved rate {plan.achieved_rate:.2f}  theta {plan.theta}")
    for s in plan.chosen_servers:
        print(f"    {s} keeps {sorted(plan.edge_microservices[s])}")
