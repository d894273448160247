"""Priority-driven subtask offloading.

Each subtask needs one microservice and may run on any target hosting it:
MEC servers (per the deployment plan), cloud servers (always) and other
UEs (per their D2D caches). The offload matrix holds one latency per
(subtask, target) pair, ``nan`` where the target cannot serve it.

A subtask's integration priority pairs the serial number of its fastest
target in its object sequence with the popularity of its parent service.
``design_queue`` merges the per-UE subtask chains by priority and
``evaluate_schedule`` runs the merged queue: cloud targets take any number
of subtasks at once, MEC servers and UEs serve one at a time in queue order.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

__all__ = [
    "MEC", "CLOUD", "UE",
    "Subtask", "Target", "OffloadMatrix", "IntegrationPriority", "ScheduleEntry", "Schedule",
    "LatencyProvider", "ExplicitLatency", "SyntheticLatency",
    "build_offload_matrix", "object_sequence", "redefined_sequence", "integration_priority",
    "design_queue", "fcfs_queue", "evaluate_schedule", "validate_schedule",
    "matrix_to_csv", "matrix_from_csv", "schedule_to_csv",
]

MEC, CLOUD, UE = "mec", "cloud", "ue"
_KIND_RANK = {MEC: 0, CLOUD: 1, UE: 2}


@dataclass(frozen=True, order=True)
class Subtask:
    ue: str
    index: int
    microservice: str | None = field(default=None, compare=False)
    service: str | None = field(default=None, compare=False)
    work: float = field(default=1.0, compare=False)

    @property
    def label(self):
        return f"{self.ue}.{self.index}"


@dataclass(frozen=True)
class Target:
    kind: str
    id: str

    def __str__(self):
        return self.id


@dataclass(frozen=True)
class IntegrationPriority:
    """(main, sub) pair; compared as a pair, never folded into one float."""

    main: int
    sub: float


class LatencyProvider(Protocol):
    def latency(self, subtask: Subtask, target: Target) -> float: ...


@dataclass(frozen=True)
class ExplicitLatency:
    """Latencies looked up by ``(subtask label, target id)``."""

    table: Mapping[tuple, float]

    def latency(self, subtask, target):
        return self.table[(subtask.label, target.id)]

    @classmethod
    def from_rows(cls, rows: Mapping[str, Mapping[str, float]]):
        return cls({(r, t): float(v) for r, cols in rows.items() for t, v in cols.items()})


@dataclass(frozen=True)
class SyntheticLatency:
    """Latency model built from radio and compute constants.

    MEC servers and UEs: ``work / speed``. Cloud: ``rtt + data_bits / rate``
    where ``rate = bandwidth * log2(1 + p_tx * gain / (noise_density * bandwidth))``.
    ``channel_gain`` is a normalized gain so that the radio constants give a
    usable SNR.
    """

    mec_speed: float = 100.0
    ue_speed: float = 50.0
    cloud_rtt: float = 0.1
    data_bits: float = 1e5
    bandwidth_hz: float = 5e6
    tx_power_dbm: float = 14.0
    noise_density: float = 1e-9
    channel_gain: float = 1.0

    @property
    def link_rate(self):
        p_tx = 10 ** (self.tx_power_dbm / 10) / 1000
        snr = p_tx * self.channel_gain / (self.noise_density * self.bandwidth_hz)
        return self.bandwidth_hz * math.log2(1 + snr)

    def latency(self, subtask, target):
        if target.kind == CLOUD:
            return self.cloud_rtt + self.data_bits / self.link_rate
        speed = self.mec_speed if target.kind == MEC else self.ue_speed
        return subtask.work / speed


@dataclass(frozen=True)
class OffloadMatrix:
    subtasks: tuple
    targets: tuple
    latency: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        object.__setattr__(self, "targets", tuple(self.targets))
        lat = np.asarray(self.latency, dtype=float).reshape(len(self.subtasks), len(self.targets))
        lat.setflags(write=False)
        object.__setattr__(self, "latency", lat)
        ranks = [_KIND_RANK[t.kind] for t in self.targets]
        if ranks != sorted(ranks):
            raise ValueError("columns must be ordered MEC, cloud, UE")
        present = lat[~np.isnan(lat)]
        if np.any(present <= 0):
            raise ValueError("latencies must be positive")
        object.__setattr__(self, "_row", {s: i for i, s in enumerate(self.subtasks)})

    def row(self, subtask) -> int:
        return self._row[subtask]

    def present(self, subtask):
        return ~np.isnan(self.latency[self.row(subtask)])

    def without(self, mask) -> "OffloadMatrix":
        """Copy with the cells under boolean ``mask`` removed."""
        lat = np.array(self.latency)
        lat[np.asarray(mask, dtype=bool)] = np.nan
        return OffloadMatrix(self.subtasks, self.targets, lat)


def build_offload_matrix(subtasks: Sequence[Subtask], plan, latency: LatencyProvider, *,
                         mec_ids: Sequence[str], cloud_ids: Sequence[str] = ("Cloud1",),
                         ue_caches: Mapping[str, Iterable[str]] | None = None,
                         cloud_microservices: Iterable[str] | None = None) -> OffloadMatrix:
    """Latency of every subtask on every target that hosts its microservice.

    Edge hosting follows ``plan.edge_microservices``; UE hosting follows
    ``ue_caches``, and a UE is never a D2D target for its own subtasks.
    Clouds host ``cloud_microservices`` (the whole catalog); ``None`` means
    they host anything.
    """
    cloud_ms = None if cloud_microservices is None else frozenset(cloud_microservices)
    ue_caches = {u: frozenset(c) for u, c in (ue_caches or {}).items()}
    targets = ([Target(MEC, m) for m in mec_ids] + [Target(CLOUD, c) for c in cloud_ids]
               + [Target(UE, u) for u in ue_caches])
    edge = plan.edge_microservices if plan is not None else {}
    lat = np.full((len(subtasks), len(targets)), np.nan)
    for i, st in enumerate(subtasks):
        for j, t in enumerate(targets):
            if t.kind == MEC:
                hosted = st.microservice in edge.get(t.id, ())
            elif t.kind == CLOUD:
                hosted = cloud_ms is None or st.microservice in cloud_ms
            else:
                hosted = t.id != st.ue and st.microservice in ue_caches[t.id]
            if hosted:
                lat[i, j] = latency.latency(st, t)
    return OffloadMatrix(tuple(subtasks), tuple(targets), lat)


def object_sequence(matrix: OffloadMatrix, subtask) -> list:
    """Targets able to serve ``subtask``, in column order."""
    cols = np.flatnonzero(matrix.present(subtask))
    if cols.size == 0:
        raise ValueError(f"unschedulable subtask {subtask.label}: no target hosts it")
    return [matrix.targets[j] for j in cols]


def redefined_sequence(matrix: OffloadMatrix, subtask) -> dict:
    """Object sequence renumbered ``1..n``: serial number -> target."""
    return {i + 1: t for i, t in enumerate(object_sequence(matrix, subtask))}


def _best_serial(matrix, subtask):
    row = matrix.latency[matrix.row(subtask)]
    cols = np.flatnonzero(~np.isnan(row))
    if cols.size == 0:
        raise ValueError(f"unschedulable subtask {subtask.label}: no target hosts it")
    # argmin returns the first minimum, i.e. the smaller serial on ties
    k = int(np.argmin(row[cols]))
    return k + 1, matrix.targets[cols[k]], float(row[cols[k]])


def integration_priority(matrix: OffloadMatrix, subtask: Subtask, catalog) -> IntegrationPriority:
    main, _, _ = _best_serial(matrix, subtask)
    sub = catalog.popularity(subtask.service) if subtask.service is not None else 0.0
    return IntegrationPriority(main, sub)


def _chains(subtasks):
    chains = {}
    for st in sorted(subtasks, key=lambda s: (s.ue, s.index)):
        chains.setdefault(st.ue, []).append(st)
    return chains


def design_queue(subtasks: Iterable[Subtask], priorities: Mapping[Subtask, IntegrationPriority],
                 larger_first: bool = True) -> list:
    """Merge per-UE chains, always taking the best head next.

    Heads are ranked by ``(main, sub)``, larger first by default, then by
    UE id and index. Each UE's subtasks leave in index order.
    """
    sign = -1 if larger_first else 1
    chains = _chains(subtasks)
    heap, cursor = [], {}
    for ue, chain in chains.items():
        cursor[ue] = 0
        st = chain[0]
        p = priorities[st]
        heapq.heappush(heap, (sign * p.main, sign * p.sub, ue, st.index, st))
    queue = []
    while heap:
        *_, st = heapq.heappop(heap)
        queue.append(st)
        cursor[st.ue] += 1
        chain = chains[st.ue]
        if cursor[st.ue] < len(chain):
            nxt = chain[cursor[st.ue]]
            p = priorities[nxt]
            heapq.heappush(heap, (sign * p.main, sign * p.sub, nxt.ue, nxt.index, nxt))
    return queue


def fcfs_queue(subtasks: Iterable[Subtask]) -> list:
    """Arrival order, ignoring priorities (baseline)."""
    return list(subtasks)


@dataclass(frozen=True)
class ScheduleEntry:
    subtask: Subtask
    target: Target
    start: float
    finish: float
    delay_kind: str  # "pd" (propagation, cloud) or "pr" (processing)


@dataclass(frozen=True)
class Schedule:
    entries: tuple
    makespan: float

    def by_subtask(self):
        return {e.subtask: e for e in self.entries}

    def busy_time(self, kind=MEC) -> float:
        return sum(e.finish - e.start for e in self.entries if e.target.kind == kind)


def evaluate_schedule(queue: Sequence[Subtask], matrix: OffloadMatrix,
                      priorities: Mapping[Subtask, IntegrationPriority] | None = None, *,
                      release: float = 0.0, ready: dict | None = None,
                      ue_ready: dict | None = None) -> Schedule:
    """Start and finish times for ``queue`` processed in order.

    Every subtask goes to its minimum-latency target. It starts once its
    UE predecessor has finished and, on a MEC server or UE, once that
    target is free. ``release`` is the earliest start; ``ready`` and
    ``ue_ready`` (updated in place when given) carry per-target free times
    and per-UE chain finish times between calls.
    """
    free = ready if ready is not None else {}
    done = ue_ready if ue_ready is not None else {}
    entries = []
    for st in queue:
        serial, target, lat = _best_serial(matrix, st)
        if priorities is not None and priorities[st].main != serial:
            raise ValueError(f"priority of {st.label} disagrees with its matrix row")
        start = max(release, done.get(st.ue, release))
        if target.kind != CLOUD:
            start = max(start, free.get(target, release))
        finish = start + lat
        if target.kind != CLOUD:
            free[target] = finish
        done[st.ue] = finish
        entries.append(ScheduleEntry(st, target, start, finish,
                                     "pd" if target.kind == CLOUD else "pr"))
    makespan = max((e.finish for e in entries), default=release) - release
    return Schedule(tuple(entries), makespan)


def validate_schedule(schedule: Schedule, matrix: OffloadMatrix):
    """Check a schedule against the offloading constraints; ``(ok, violations)``."""
    problems = []
    seen = {}
    for e in schedule.entries:
        seen[e.subtask] = seen.get(e.subtask, 0) + 1
    for st in matrix.subtasks:
        if seen.get(st, 0) != 1:
            problems.append(f"(36b) {st.label} assigned {seen.get(st, 0)} times")
    for e in schedule.entries:
        if e.subtask not in matrix._row:
            problems.append(f"(36b) {e.subtask.label} not in matrix")
            continue
        j = matrix.targets.index(e.target) if e.target in matrix.targets else None
        if j is None or math.isnan(matrix.latency[matrix.row(e.subtask), j]):
            problems.append(f"(36b) {e.subtask.label} sent to {e.target} which cannot serve it")
        if e.start < 0:
            problems.append(f"(36g) {e.subtask.label} starts at {e.start}")
        if not e.finish > 0 or not e.finish > e.start:
            problems.append(f"(36f) {e.subtask.label} finishes at {e.finish}")
    by_ue = {}
    for e in schedule.entries:
        by_ue.setdefault(e.subtask.ue, []).append(e)
    for ue, es in by_ue.items():
        es.sort(key=lambda e: e.subtask.index)
        for prev, cur in zip(es, es[1:]):
            if cur.start < prev.finish - 1e-12:
                problems.append(f"(36c) {cur.subtask.label} starts before {prev.subtask.label} ends")
    by_target = {}
    for e in schedule.entries:
        if e.target.kind != CLOUD:
            by_target.setdefault(e.target, []).append(e)
    for t, es in by_target.items():
        es.sort(key=lambda e: (e.start, e.finish))
        for prev, cur in zip(es, es[1:]):
            if cur.start < prev.finish - 1e-12:
                problems.append(
                    f"(36d) {prev.subtask.label} and {cur.subtask.label} overlap on {t}")
    return not problems, problems


def _target_kind(name: str) -> str:
    low = name.lower()
    if low.startswith("cloud"):
        return CLOUD
    if low.startswith("ue"):
        return UE
    return MEC


def matrix_to_csv(matrix: OffloadMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + [t.id for t in matrix.targets])
    for st, row in zip(matrix.subtasks, matrix.latency):
        w.writerow([st.label] + ["-" if math.isnan(x) else f"{x:g}" for x in row])
    return buf.getvalue()


def matrix_from_csv(text: str, subtasks: Mapping[str, Subtask] | None = None) -> OffloadMatrix:
    """Parse the tabular layout written by :func:`matrix_to_csv`.

    Column kinds come from the header: names starting with ``Cloud`` are
    cloud servers, names starting with ``UE`` are UEs, the rest MEC servers.
    Row labels are ``<ue>.<index>``; ``subtasks`` maps labels to full
    :class:`Subtask` records when microservices matter.
    """
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    targets = tuple(Target(_target_kind(h), h) for h in header[1:])
    sts, lat = [], []
    for r in body:
        label = r[0]
        if subtasks is not None and label in subtasks:
            st = subtasks[label]
        else:
            ue, _, idx = label.rpartition(".")
            st = Subtask(ue, int(idx))
        sts.append(st)
        lat.append([np.nan if c.strip() == "-" else float(c) for c in r[1:]])
    return OffloadMatrix(tuple(sts), targets, np.array(lat, dtype=float))


def schedule_to_csv(schedule: Schedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subtask", "target", "start", "finish"])
    for e in schedule.entries:
        w.writerow([e.subtask.label, e.target.id, f"{e.start:.12g}", f"{e.finish:.12g}"])
    return buf.getvalue()
