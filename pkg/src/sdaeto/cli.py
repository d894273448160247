"""Command line driver: ``deploy``, ``schedule``, ``simulate``, ``sweep``, ``verify``.

Exit codes: 0 success, 1 usage or parse error, 2 domain infeasibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .adgraph import MecServer, approx_storage, build_ad_graph, kmst_from_quota
from .catalog import TOL, ServiceCatalog, hit_rate
from .deployment import DeploymentPlan, plan_from_servers, solve_deployment
from .errors import InfeasibleError
from .kmst import TreeSolution, verify_tree
from .offload import (ExplicitLatency, Subtask, SyntheticLatency, build_offload_matrix,
                      design_queue, evaluate_schedule, integration_priority,
                      schedule_to_csv, validate_schedule)
from .offload import CLOUD, MEC, UE, Schedule, ScheduleEntry, Target
from .sim import SimConfig, metrics_to_csv, simulate, summarize

log = logging.getLogger("sdaeto")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2

EUR_NOTE = ("eur = 0.5 * footprint / total capacity + 0.5 * MEC busy time / "
            "(MECs * slot duration); an artifact definition, not a published formula")

SWEEP_PARAMS = {
    "bs": "service_arrival",
    "bu": "task_arrival",
    "mecs": "num_mecs",
    "ues": "num_ues",
    "rate": "required_rate",
    "window": "window",
}
INT_PARAMS = {"mecs", "ues", "window"}
TREE_SOLVERS = ("exact", "heuristic")


class ScenarioError(ValueError):
    """Invalid scenario file; the message names the offending field or id."""


@dataclass
class Scenario:
    catalog: ServiceCatalog | None
    servers: tuple = ()
    clouds: tuple = ("Cloud1",)
    ue_ids: tuple = ()
    ue_caches: Mapping[str, frozenset] = field(default_factory=dict)
    subtasks: tuple = ()
    latency: object = None
    sim: SimConfig | None = None


def _need(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioError(f"{where}: missing field '{key}'")
    return obj[key]


def _list(obj, where):
    if not isinstance(obj, list):
        raise ScenarioError(f"{where}: expected a list")
    return obj


def parse_scenario(data: Mapping) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: expected a JSON object")
    unknown = set(data) - {"catalog", "servers", "clouds", "ues", "tasks", "latency", "sim",
                           "description"}
    if unknown:
        raise ScenarioError(f"scenario: unknown sections {sorted(unknown)}")

    catalog = None
    if "catalog" in data:
        try:
            catalog = ServiceCatalog.from_dict(data["catalog"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"catalog: {exc}") from None
    known_ms = catalog.microservices_of(catalog.ids) if catalog else frozenset()

    servers = []
    for i, s in enumerate(_list(data.get("servers", []), "servers")):
        where = f"servers[{i}]"
        sid = _need(s, "id", where)
        cap = _need(s, "capacity", where)
        if not isinstance(cap, int) or cap < 0:
            raise ScenarioError(f"{where}.capacity: expected a non-negative integer")
        svcs = _list(s.get("services", []), f"{where}.services")
        ms = s.get("microservices")
        for x in svcs:
            if catalog is None or x not in catalog:
                raise ScenarioError(f"{where}.services: unknown service '{x}'")
        for x in ms or ():
            if x not in known_ms:
                raise ScenarioError(f"{where}.microservices: unknown microservice '{x}'")
        servers.append(MecServer(sid, cap, frozenset(svcs),
                                 None if ms is None else frozenset(ms)))
    ids = [s.id for s in servers]
    dup = {x for x in ids if ids.count(x) > 1}
    if dup:
        raise ScenarioError(f"servers: duplicate id '{sorted(dup)[0]}'")

    clouds = tuple(_list(data.get("clouds", ["Cloud1"]), "clouds"))

    ues = data.get("ues", {})
    ue_ids = tuple(ues.get("ids", [f"UE{i + 1}" for i in range(int(ues.get("count", 0)))]))
    caches = {}
    for ue, cached in (ues.get("caches") or {}).items():
        if ue not in ue_ids:
            raise ScenarioError(f"ues.caches: unknown UE '{ue}'")
        for x in cached:
            if x not in known_ms:
                raise ScenarioError(f"ues.caches.{ue}: unknown microservice '{x}'")
        caches[ue] = frozenset(cached)
    for ue in ue_ids:
        caches.setdefault(ue, frozenset())

    subtasks, seen = [], set()
    for i, t in enumerate(_list(data.get("tasks", []), "tasks")):
        where = f"tasks[{i}]"
        ue = _need(t, "ue", where)
        if ue not in ue_ids:
            raise ScenarioError(f"{where}.ue: unknown UE '{ue}'")
        idx = _need(t, "index", where)
        if (ue, idx) in seen:
            raise ScenarioError(f"{where}: duplicate subtask {ue}.{idx}")
        seen.add((ue, idx))
        svc = _need(t, "service", where)
        m = _need(t, "microservice", where)
        if catalog is None or svc not in catalog:
            raise ScenarioError(f"{where}.service: unknown service '{svc}'")
        if m not in catalog.service(svc).microservices:
            raise ScenarioError(f"{where}.microservice: '{m}' is not part of service '{svc}'")
        subtasks.append(Subtask(ue, int(idx), m, svc, float(t.get("work", 1.0))))

    latency = None
    lat = data.get("latency", {"mode": "synthetic"})
    mode = lat.get("mode", "synthetic")
    if mode == "explicit":
        table = _need(lat, "table", "latency")
        labels = {st.label for st in subtasks}
        targets = set(ids) | set(clouds) | set(ue_ids)
        for row, cols in table.items():
            if row not in labels:
                raise ScenarioError(f"latency.table: unknown subtask '{row}'")
            for col, v in cols.items():
                if col not in targets:
                    raise ScenarioError(f"latency.table.{row}: unknown target '{col}'")
                if not isinstance(v, (int, float)) or v <= 0:
                    raise ScenarioError(f"latency.table.{row}.{col}: latency must be positive")
        latency = ExplicitLatency.from_rows(table)
    elif mode == "synthetic":
        params = {k: v for k, v in lat.items() if k != "mode"}
        try:
            latency = SyntheticLatency(**params)
        except TypeError as exc:
            raise ScenarioError(f"latency: {exc}") from None
    else:
        raise ScenarioError(f"latency.mode: unknown mode '{mode}'")

    sim = None
    if "sim" in data:
        try:
            sim = SimConfig.from_dict(data["sim"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"sim: {exc}") from None

    return Scenario(catalog, tuple(servers), clouds, ue_ids, caches, tuple(subtasks), latency, sim)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return parse_scenario(data)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def load_plan(path, scenario: Scenario) -> DeploymentPlan:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    known = {s.id for s in scenario.servers}
    for s in data.get("servers", []):
        if known and s not in known:
            raise ScenarioError(f"{path}: servers: unknown server '{s}'")
    for s in data.get("microservices", {}):
        if s not in data.get("servers", []):
            raise ScenarioError(f"{path}: microservices: server '{s}' is not in the plan")
    try:
        return DeploymentPlan.from_dict(data, scenario.catalog)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# -- commands ---------------------------------------------------------------

def cmd_deploy(args) -> int:
    sc = load_scenario(args.scenario)
    if sc.catalog is None:
        raise ScenarioError(f"{args.scenario}: deploy needs a catalog section")
    try:
        plan = solve_deployment(sc.catalog, sc.servers, args.rate, scale=args.kappa,
                                exact_limit=args.exact_limit)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _write(args.out, plan.to_json())
    print(f"footprint {plan.footprint} achieved_rate {plan.achieved_rate:.6g} "
          f"servers {','.join(plan.chosen_servers) or '-'}", file=sys.stderr)
    return EXIT_OK


def scenario_matrix(sc: Scenario, plan):
    return build_offload_matrix(sc.subtasks, plan, sc.latency, mec_ids=[s.id for s in sc.servers],
                                cloud_ids=sc.clouds, ue_caches=sc.ue_caches,
                                cloud_microservices=sc.catalog.microservices_of(sc.catalog.ids))


def cmd_schedule(args) -> int:
    sc = load_scenario(args.scenario)
    if sc.catalog is None:
        raise ScenarioError(f"{args.scenario}: schedule needs a catalog section")
    plan = load_plan(args.plan, sc) if args.plan else plan_from_servers(sc.catalog, sc.servers)
    try:
        matrix = scenario_matrix(sc, plan)
    except KeyError as exc:
        raise ScenarioError(f"latency.table: no entry for {exc}") from None
    bad = [st.label for st in sc.subtasks if not matrix.present(st).any()]
    if bad:
        print("unschedulable subtask(s): " + ", ".join(bad), file=sys.stderr)
        return EXIT_INFEASIBLE
    prio = {st: integration_priority(matrix, st, sc.catalog) for st in sc.subtasks}
    queue = design_queue(sc.subtasks, prio, larger_first=not args.smaller_first)
    sched = evaluate_schedule(queue, matrix, prio)
    _write(args.out, schedule_to_csv(sched))
    print(f"T_total {sched.makespan:.12g}")
    return EXIT_OK


def _run_point(job):
    config, runs, catalog = job
    parts = []
    for r in range(runs):
        cfg = replace(config, seed=config.seed + r)
        rows = metrics_to_csv(simulate(cfg, catalog=catalog), cfg.seed)
        parts.append(rows if r == 0 else rows.split("\n", 1)[1])
    return "".join(parts)


def _sim_config(sc: Scenario, args) -> SimConfig:
    cfg = sc.sim or SimConfig()
    over = {"seed": args.seed}
    if args.slots is not None:
        over["slots"] = args.slots
    return replace(cfg, **over)


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    cfg = _sim_config(sc, args)
    metrics = simulate(cfg, policy=args.policy, catalog=sc.catalog)
    _write(args.out, metrics_to_csv(metrics, cfg.seed))
    summary = summarize(metrics)
    summary.update(policy=args.policy, seed=cfg.seed, eur_definition=EUR_NOTE)
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def parse_values(text: str, param: str) -> list:
    """``a,b,c`` or inclusive ``start:stop:step``."""
    cast = int if param in INT_PARAMS else float
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad range {text!r}; use start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        vals = [round(start + i * step, 10) for i in range(n)]
    else:
        vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ValueError("no sweep values")
    if cast is int:
        if any(v != int(v) for v in vals):
            raise ValueError(f"{param} takes integer values")
        vals = [int(v) for v in vals]
    return vals


def _point_config(base: SimConfig, param: str, value) -> SimConfig:
    over = {SWEEP_PARAMS[param]: value}
    if param == "mecs":
        over["capacities"] = ()
    if param == "window":
        over["window_mode"] = "fixed"
    return replace(base, **over)


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        print(f"unknown sweep parameter '{args.param}'; choose from "
              f"{', '.join(SWEEP_PARAMS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        values = parse_values(args.values, args.param)
    except ValueError as exc:
        print(f"--values: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sc = load_scenario(args.scenario)
    base = _sim_config(sc, args)
    try:
        configs = [_point_config(base, args.param, v) for v in values]
    except ValueError as exc:
        print(f"--values: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(c, args.runs, sc.catalog) for c in configs]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            texts = list(pool.map(_run_point, jobs))
    else:
        texts = [_run_point(j) for j in jobs]
    points = []
    for i, (v, text) in enumerate(zip(values, texts)):
        name = f"{args.param}_{i:03d}.csv"
        (out / name).write_text(text)
        points.append({"index": i, "value": v, "file": name})
    manifest = {
        "param": args.param,
        "field": SWEEP_PARAMS[args.param],
        "seed": args.seed,
        "runs": args.runs,
        "points": points,
        "config": base.to_dict(),
        "eur_definition": EUR_NOTE,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"{len(points)} points written to {out}", file=sys.stderr)
    return EXIT_OK


def _verify_plan(sc: Scenario, plan: DeploymentPlan, scale: int):
    """Re-derive the plan's tree as a k-MST solution and check it."""
    problems = []
    graph = build_ad_graph(sc.servers, sc.catalog)
    for s in plan.chosen_servers:
        if s not in graph.nodes:
            return [f"plan server '{s}' is not in the scenario"]
    for s, ms in plan.edge_microservices.items():
        extra = ms - graph.microservices[s]
        if extra:
            problems.append(f"server {s} keeps microservices it was never given: {sorted(extra)}")
    cap = sum(graph.capacity[s] for s in plan.chosen_servers)
    if plan.footprint > cap:
        problems.append(f"footprint {plan.footprint} exceeds capacity {cap}")
    if plan.solver not in TREE_SOLVERS:
        # hand-written or baseline plans: hosting and capacity only
        return problems
    for a, b in plan.tree_edges:
        if graph.edge_weight(a, b) is None:
            problems.append(f"tree edge {a}-{b} is not an AD-graph edge")
    if problems:
        return problems
    if plan.chosen_servers:
        try:
            phi = sum(approx_storage(graph, comp, [e for e in plan.tree_edges if e[0] in comp])
                      for comp in graph.subgraph(plan.chosen_servers).components())
        except ValueError as exc:
            return [str(exc)]
        if phi != plan.footprint:
            problems.append(f"footprint {plan.footprint} != recomputed {phi}")
    rate = hit_rate(sc.catalog, plan.edge_services)
    if rate < plan.required_rate - TOL:
        problems.append(f"achieved rate {rate:.6g} below required {plan.required_rate:.6g}")
    # tree check on the k-MST image, one component at a time
    for comp in graph.subgraph(plan.chosen_servers).components() if plan.chosen_servers else []:
        sub = graph.subgraph(comp)
        inst = kmst_from_quota(sub, 0, scale)
        n = len(sub.nodes)
        pos = {v: i for i, v in enumerate(sub.nodes)}
        verts = frozenset(pos.values()) | frozenset(n + i for i in pos.values())
        edges = {(pos[v], n + pos[v]) for v in comp}
        edges |= {tuple(sorted((pos[a], pos[b]))) for a, b in plan.tree_edges if a in pos}
        sol = TreeSolution(verts, frozenset(edges), sum(inst.edges[e] for e in edges),
                           sum(inst.reward[v] for v in verts))
        ok, probs = verify_tree(inst, sol, 0)
        problems += probs
    return problems


def cmd_verify(args) -> int:
    sc = load_scenario(args.scenario)
    if sc.catalog is None:
        raise ScenarioError(f"{args.scenario}: verify needs a catalog section")
    plan = load_plan(args.plan, sc) if args.plan else None
    problems = []
    if plan is not None and sc.servers:
        problems += _verify_plan(sc, plan, args.kappa)
    if args.schedule:
        sched = _read_schedule(args.schedule, sc)
        matrix = scenario_matrix(sc, plan)
        ok, probs = validate_schedule(sched, matrix)
        problems += probs
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} problem(s)", file=sys.stderr)
    return EXIT_OK if not problems else EXIT_INFEASIBLE


def _read_schedule(path, sc: Scenario) -> Schedule:
    import csv

    by_label = {st.label: st for st in sc.subtasks}
    kinds = {s.id: MEC for s in sc.servers}
    kinds.update({c: CLOUD for c in sc.clouds})
    kinds.update({u: UE for u in sc.ue_ids})
    entries = []
    try:
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    for i, r in enumerate(rows, start=2):
        try:
            st = by_label[r["subtask"]]
            target = Target(kinds[r["target"]], r["target"])
            start, finish = float(r["start"]), float(r["finish"])
        except KeyError as exc:
            raise ScenarioError(f"{path}: line {i}: unknown id {exc}") from None
        except (TypeError, ValueError):
            raise ScenarioError(f"{path}: line {i}: bad time value") from None
        entries.append(ScheduleEntry(st, target, start, finish,
                                     "pd" if target.kind == CLOUD else "pr"))
    makespan = max((e.finish for e in entries), default=0.0)
    return Schedule(tuple(entries), makespan)


# -- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _rate(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"rate {v} outside [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdaeto", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("deploy", help="solve service deployment, write plan JSON")
    d.add_argument("scenario")
    d.add_argument("--rate", type=_rate, required=True, help="required edge offloading rate")
    d.add_argument("--kappa", type=int, default=1000, help="reward scaling factor")
    d.add_argument("--exact-limit", type=int, default=16)
    d.add_argument("--out", default="-")
    d.set_defaults(func=cmd_deploy)

    s = sub.add_parser("schedule", help="design the offloading queue, write schedule CSV")
    s.add_argument("scenario")
    s.add_argument("--plan")
    s.add_argument("--out", default="-")
    s.add_argument("--smaller-first", action="store_true",
                   help="rank priorities smaller-first instead of larger-first")
    s.set_defaults(func=cmd_schedule)

    for name, func, text in (("simulate", cmd_simulate, "run one simulation, write metrics CSV"),
                             ("sweep", cmd_sweep, "run a parameter sweep")):
        c = sub.add_parser(name, help=text)
        c.add_argument("scenario")
        c.add_argument("--seed", type=int, required=True)
        c.add_argument("--slots", type=int)
        if name == "simulate":
            c.add_argument("--policy", default="sd-aeto",
                           choices=["sd-aeto", "random_deploy", "no_priority_fcfs"])
            c.add_argument("--out", default="-")
        else:
            c.add_argument("--param", required=True)
            c.add_argument("--values", required=True)
            c.add_argument("--runs", type=int, default=1, help="seeds per point, from --seed up")
            c.add_argument("--workers", type=int, default=1)
            c.add_argument("--out", required=True, help="output directory")
        c.set_defaults(func=func)

    v = sub.add_parser("verify", help="check a plan and/or schedule against a scenario")
    v.add_argument("scenario")
    v.add_argument("--plan")
    v.add_argument("--schedule")
    v.add_argument("--kappa", type=int, default=1000)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
