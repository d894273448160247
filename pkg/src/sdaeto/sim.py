"""Time-slotted simulation of deployment plus offloading.

One slot: a new service may be pushed (popularities shift, deployment is
re-solved), every UE emits a task with probability ``task_arrival``, tasks
split into subtasks, and subtasks are batched by the subtask window:

* ``fixed``: once ``window`` subtasks are pending, one batch of exactly
  ``window`` subtasks leaves at the end of the slot; the rest wait.
* ``floating``: everything pending leaves at the end of the slot.

Each batch goes through matrix, priorities, queue design and schedule
evaluation. MEC and UE free times carry over between batches.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from .adgraph import MecServer
from .catalog import (NewServiceDistribution, Service, ServiceCatalog, hit_rate, push_service,
                      sample_new_service)
from .deployment import DeploymentPlan, plan_from_servers, solve_deployment
from .errors import InfeasibleError
from .offload import (MEC, UE, Subtask, SyntheticLatency, build_offload_matrix, design_queue,
                      evaluate_schedule, fcfs_queue, integration_priority)

__all__ = [
    "SimConfig", "SlotMetrics", "SimState", "POLICIES",
    "make_catalog", "candidate_placement", "random_placement", "initial_state", "run_slot",
    "simulate", "run_baseline", "critical_ues", "compute_eur", "metrics_to_csv", "summarize",
]

log = logging.getLogger(__name__)

POLICIES = ("sd-aeto", "random_deploy", "no_priority_fcfs")


@dataclass(frozen=True)
class SimConfig:
    num_mecs: int = 4
    num_ues: int = 20
    task_arrival: float = 0.6
    service_arrival: float = 0.0
    required_rate: float = 0.9
    window_mode: str = "floating"
    window: int = 30
    slots: int = 50
    seed: int = 0
    acceptance_prob: float = 0.95
    capacity: int = 15
    capacities: tuple = ()
    num_services: int = 20
    microservices_per_service: int = 3
    shared_microservices: int = 0
    zipf_exponent: float = 0.8
    replication: int = 2
    new_service_popularities: tuple = (0.05, 0.1, 0.15)
    deployment_threshold: float = 0.05
    max_subtasks: int = 4
    ue_cache_size: int = 2
    num_clouds: int = 1
    slot_duration: float = 1.0
    scale: int = 1000
    exact_limit: int = 16
    work_min: float = 0.5
    work_max: float = 1.5
    eur_weights: tuple = (0.5, 0.5)
    latency: SyntheticLatency = field(default_factory=SyntheticLatency)

    def __post_init__(self):
        for name in ("task_arrival", "service_arrival", "required_rate", "acceptance_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.window_mode not in ("fixed", "floating"):
            raise ValueError(f"unknown window mode {self.window_mode!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.num_mecs < 0 or self.num_ues < 0:
            raise ValueError("counts must be non-negative")
        if self.capacities and len(self.capacities) != self.num_mecs:
            raise ValueError("capacities must list one value per MEC server")
        object.__setattr__(self, "capacities", tuple(self.capacities))
        object.__setattr__(self, "new_service_popularities", tuple(self.new_service_popularities))
        object.__setattr__(self, "eur_weights", tuple(self.eur_weights))

    @property
    def mec_ids(self):
        return tuple(f"M{i + 1:02d}" for i in range(self.num_mecs))

    @property
    def ue_ids(self):
        return tuple(f"UE{i + 1:03d}" for i in range(self.num_ues))

    @property
    def cloud_ids(self):
        return tuple(f"Cloud{i + 1}" for i in range(self.num_clouds))

    def server_capacities(self):
        caps = self.capacities or (self.capacity,) * self.num_mecs
        return dict(zip(self.mec_ids, caps))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["latency"] = asdict(self.latency)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sim fields: {sorted(unknown)}")
        data = dict(data)
        if "latency" in data and not isinstance(data["latency"], SyntheticLatency):
            data["latency"] = SyntheticLatency(**data["latency"])
        for key in ("capacities", "new_service_popularities", "eur_weights"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class SlotMetrics:
    slot: int
    subtasks: int
    edge_offload_rate: float | None
    analytic_hit_rate: float
    theta: float | None
    eur: float
    makespan: float
    mean_delay: float | None
    max_delay: float | None
    footprint: int
    pending: int
    batches: int
    services: int
    edge_served: int = 0
    delay_sum: float = 0.0


@dataclass(frozen=True)
class SimState:
    slot: int
    catalog: ServiceCatalog
    plan: DeploymentPlan | None
    servers: tuple
    ue_caches: Mapping[str, frozenset]
    pending: tuple = ()
    target_free: Mapping = field(default_factory=dict)
    ue_free: Mapping = field(default_factory=dict)
    next_index: Mapping[str, int] = field(default_factory=dict)
    next_service: int = 0


def critical_ues(window: int, task_arrival: float) -> float:
    """UE count at which a fixed window of ``window`` subtasks turns over."""
    if window < 1:
        raise ValueError("window must be >= 1")
    return window * task_arrival


def make_catalog(config: SimConfig, rng: np.random.Generator) -> ServiceCatalog:
    """Zipf-popular services; microservices private unless a shared pool is set."""
    n, k = config.num_services, config.microservices_per_service
    weights = 1.0 / np.arange(1, n + 1) ** config.zipf_exponent
    pops = weights / weights.sum()
    services = []
    pool = [f"ms_shared{j:02d}" for j in range(config.shared_microservices)]
    for i in range(n):
        ms = {f"ms{i:03d}_{j}" for j in range(k)}
        if pool:
            ms.add(pool[int(rng.integers(len(pool)))])
        services.append(Service(f"s{i:03d}", float(pops[i]), frozenset(ms)))
    # exact renormalization against float drift in the weights
    total = math.fsum(s.popularity for s in services)
    services = [replace(s, popularity=s.popularity / total) for s in services]
    return ServiceCatalog(tuple(services), deployment_threshold=config.deployment_threshold)


def candidate_placement(catalog: ServiceCatalog, capacities: Mapping[str, int],
                        replication: int = 2) -> tuple:
    """Round-robin placement of services in descending popularity.

    Each service goes to up to ``replication`` servers, scanning from a
    pointer that advances by one server per service, skipping servers
    without room for the microservices they do not already hold.
    """
    ids = list(capacities)
    m = len(ids)
    placed = {s: set() for s in ids}
    micro = {s: set() for s in ids}
    pointer = 0
    for svc in catalog.by_popularity():
        got = 0
        for step in range(m):
            sid = ids[(pointer + step) % m]
            extra = catalog.storage(svc.microservices - micro[sid])
            if catalog.storage(micro[sid]) + extra <= capacities[sid]:
                placed[sid].add(svc.id)
                micro[sid] |= svc.microservices
                got += 1
                if got == replication:
                    break
        if m:
            pointer = (pointer + 1) % m
    return tuple(MecServer(s, capacities[s], frozenset(placed[s])) for s in ids)


def random_placement(catalog: ServiceCatalog, capacities: Mapping[str, int],
                     rng: np.random.Generator) -> tuple:
    """Each server caches services in random order while they fit."""
    out = []
    for sid, cap in capacities.items():
        order = rng.permutation(len(catalog.services))
        placed, micro = set(), set()
        for i in order:
            svc = catalog.services[int(i)]
            if catalog.storage(micro | svc.microservices) <= cap:
                placed.add(svc.id)
                micro |= svc.microservices
        out.append(MecServer(sid, cap, frozenset(placed)))
    return tuple(out)


def _draw_service(catalog: ServiceCatalog, rng):
    p = np.array([s.popularity for s in catalog.services])
    return catalog.services[int(rng.choice(len(p), p=p / p.sum()))]


def _ue_caches(config, catalog, rng):
    caches = {}
    for ue in config.ue_ids:
        ms = set()
        for _ in range(config.ue_cache_size):
            svc = _draw_service(catalog, rng)
            opts = sorted(svc.microservices)
            ms.add(opts[int(rng.integers(len(opts)))])
        caches[ue] = frozenset(ms)
    return caches


def _deploy(catalog, config, previous, policy, rng):
    caps = config.server_capacities()
    if policy == "random_deploy":
        servers = random_placement(catalog, caps, rng)
        return plan_from_servers(catalog, servers, config.required_rate), servers
    servers = candidate_placement(catalog, caps, config.replication)
    try:
        return solve_deployment(catalog, servers, config.required_rate, config.scale,
                                config.exact_limit), servers
    except InfeasibleError as exc:
        if previous is not None:
            log.warning("deployment infeasible (%s); keeping previous plan", exc)
            return previous, servers
    # first slot and the rate is out of reach: settle for what the candidates offer
    reach = hit_rate(catalog, frozenset().union(*(s.placed_services for s in servers)))
    rate = math.floor(reach * config.scale) / config.scale
    while rate > 0:
        try:
            return solve_deployment(catalog, servers, rate, config.scale,
                                    config.exact_limit), servers
        except InfeasibleError:
            rate = math.floor((rate - 1.0 / config.scale) * config.scale) / config.scale
    return solve_deployment(catalog, servers, 0.0, config.scale, config.exact_limit), servers


def initial_state(config: SimConfig, rng: np.random.Generator,
                  catalog: ServiceCatalog | None = None, policy: str = "sd-aeto",
                  policy_rng: np.random.Generator | None = None) -> SimState:
    catalog = catalog if catalog is not None else make_catalog(config, rng)
    caches = _ue_caches(config, catalog, rng)
    plan, servers = _deploy(catalog, config, None, policy, policy_rng or rng)
    return SimState(0, catalog, plan, servers, caches,
                    next_index={u: 1 for u in config.ue_ids},
                    next_service=len(catalog.services))


def compute_eur(plan: DeploymentPlan | None, schedules: Sequence, capacities: Mapping[str, int],
                slot_duration: float, weights=(0.5, 0.5)) -> float:
    """Blend of edge storage occupancy and MEC busy-time fraction over a slot."""
    if slot_duration <= 0:
        raise ValueError("slot duration must be positive")
    total_cap = sum(capacities.values())
    storage = (plan.footprint / total_cap) if plan is not None and total_cap else 0.0
    busy = sum(s.busy_time(MEC) for s in schedules)
    m = len(capacities)
    busy_frac = min(1.0, busy / (m * slot_duration)) if m else 0.0
    return weights[0] * min(1.0, storage) + weights[1] * busy_frac


def _theta(plan):
    if plan is None:
        return None
    return plan.theta


def run_slot(state: SimState, config: SimConfig, rng: np.random.Generator,
             policy: str = "sd-aeto", policy_rng: np.random.Generator | None = None):
    """Advance one slot; returns ``(SlotMetrics, next_state)``."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    policy_rng = policy_rng or rng
    catalog, plan, servers = state.catalog, state.plan, state.servers
    next_service = state.next_service
    t0 = state.slot * config.slot_duration
    t_end = t0 + config.slot_duration

    # (1) service churn
    dist = NewServiceDistribution(config.new_service_popularities, config.service_arrival,
                                  config.deployment_threshold)
    g = sample_new_service(dist, rng) if config.service_arrival > 0 else None
    if g is not None:
        sid = f"s{next_service:03d}"
        ms = frozenset(f"ms{next_service:03d}_{j}" for j in range(config.microservices_per_service))
        catalog = push_service(catalog, Service(sid, g, ms))
        catalog = replace(catalog, slot_index=state.slot)
        next_service += 1
        plan, servers = _deploy(catalog, config, plan, policy, policy_rng)

    # (2) arrivals
    next_index = dict(state.next_index)
    arrivals = []
    for ue in config.ue_ids:
        if rng.random() >= config.task_arrival:
            continue
        at = t0 + rng.random() * config.slot_duration
        h = int(rng.integers(1, config.max_subtasks + 1))
        for _ in range(h):
            svc = _draw_service(catalog, rng)
            opts = sorted(svc.microservices)
            m = opts[int(rng.integers(len(opts)))]
            work = float(rng.uniform(config.work_min, config.work_max))
            st = Subtask(ue, next_index[ue], m, svc.id, work)
            next_index[ue] += 1
            arrivals.append((at, st))
    pending = sorted(list(state.pending) + arrivals, key=lambda p: (p[0], p[1].ue, p[1].index))

    # (3) batching
    if config.window_mode == "floating":
        batches = [pending] if pending else []
        pending = []
    elif len(pending) >= config.window:
        batches = [pending[:config.window]]
        pending = pending[config.window:]
    else:
        batches = []

    # (4) offloading
    target_free = dict(state.target_free)
    ue_free = dict(state.ue_free)
    cloud_ms = catalog.microservices_of(catalog.ids)
    schedules, delays, n, edge = [], [], 0, 0
    makespan = 0.0
    for batch in batches:
        arrival = {st: at for at, st in batch}
        subtasks = [st for _, st in batch]
        matrix = build_offload_matrix(subtasks, plan, config.latency, mec_ids=config.mec_ids,
                                      cloud_ids=config.cloud_ids, ue_caches=state.ue_caches,
                                      cloud_microservices=cloud_ms)
        # draw for UE columns only, so the stream does not depend on the MEC count
        ue_cols = np.array([t.kind == UE for t in matrix.targets])
        rejected = np.zeros(matrix.latency.shape, dtype=bool)
        rejected[:, ue_cols] = rng.random((len(subtasks), int(ue_cols.sum()))) >= config.acceptance_prob
        matrix = matrix.without(rejected)
        prio = {st: integration_priority(matrix, st, catalog) for st in subtasks}
        queue = design_queue(subtasks, prio) if policy != "no_priority_fcfs" else fcfs_queue(subtasks)
        sched = evaluate_schedule(queue, matrix, prio, release=t_end, ready=target_free,
                                  ue_ready=ue_free)
        schedules.append(sched)
        makespan = max(makespan, sched.makespan)
        for e in sched.entries:
            n += 1
            edge += e.target.kind == MEC
            delays.append(e.finish - arrival[e.subtask])

    analytic = hit_rate(catalog, plan.edge_services & set(catalog.ids)) if plan else 0.0
    metrics = SlotMetrics(
        slot=state.slot,
        subtasks=n,
        edge_offload_rate=(edge / n) if n else None,
        analytic_hit_rate=analytic,
        theta=_theta(plan),
        eur=compute_eur(plan, schedules, config.server_capacities(), config.slot_duration,
                        config.eur_weights),
        makespan=makespan,
        mean_delay=float(np.mean(delays)) if delays else None,
        max_delay=float(np.max(delays)) if delays else None,
        footprint=plan.footprint if plan else 0,
        pending=len(pending),
        batches=len(batches),
        services=len(catalog),
        edge_served=edge,
        delay_sum=float(np.sum(delays)) if delays else 0.0,
    )
    nxt = replace(state, slot=state.slot + 1, catalog=catalog, plan=plan, servers=servers,
                  pending=tuple(pending), target_free=target_free, ue_free=ue_free,
                  next_index=next_index, next_service=next_service)
    return metrics, nxt


def simulate(config: SimConfig, policy: str = "sd-aeto",
             catalog: ServiceCatalog | None = None) -> list:
    """Run ``config.slots`` slots; identical inputs give identical output.

    The workload (catalog, arrivals, D2D acceptances) and the policy's own
    randomness use separate streams, so policies compared on one seed see
    the same traffic.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    work_ss, policy_ss = np.random.SeedSequence(config.seed).spawn(2)
    rng, policy_rng = np.random.default_rng(work_ss), np.random.default_rng(policy_ss)
    state = initial_state(config, rng, catalog, policy, policy_rng)
    out = []
    for _ in range(config.slots):
        m, state = run_slot(state, config, rng, policy, policy_rng)
        out.append(m)
    return out


def run_baseline(kind: str, config: SimConfig, catalog: ServiceCatalog | None = None) -> list:
    """Proxy comparison schemes: ``random_deploy`` or ``no_priority_fcfs``."""
    if kind not in ("random_deploy", "no_priority_fcfs"):
        raise ValueError(f"unknown baseline {kind!r}")
    return simulate(config, kind, catalog)


def summarize(metrics: Sequence[SlotMetrics]) -> dict:
    """Run-level aggregates: subtask-weighted rates and delays."""
    n = sum(m.subtasks for m in metrics)
    thetas = [m.theta for m in metrics if m.theta is not None]
    return {
        "subtasks": n,
        "edge_offload_rate": sum(m.edge_served for m in metrics) / n if n else None,
        "analytic_hit_rate": float(np.mean([m.analytic_hit_rate for m in metrics])),
        "mean_delay": sum(m.delay_sum for m in metrics) / n if n else None,
        "theta": float(np.mean(thetas)) if thetas else None,
        "eur": float(np.mean([m.eur for m in metrics])),
    }


METRIC_FIELDS = [f.name for f in fields(SlotMetrics)]


def metrics_to_csv(metrics: Sequence[SlotMetrics], seed: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed"] + METRIC_FIELDS)
    for m in metrics:
        row = [seed]
        for name in METRIC_FIELDS:
            v = getattr(m, name)
            row.append("" if v is None else (repr(v) if isinstance(v, float) else v))
        w.writerow(row)
    return buf.getvalue()
