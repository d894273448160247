import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from sdaeto.catalog import ServiceCatalog
from sdaeto.deployment import DeploymentPlan
from sdaeto.offload import CLOUD, MEC, Schedule, ScheduleEntry, Subtask, Target, schedule_to_csv
from sdaeto.sim import (METRIC_FIELDS, SimConfig, candidate_placement, compute_eur, critical_ues,
                        initial_state, make_catalog, metrics_to_csv, run_baseline, run_slot,
                        simulate, summarize)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals))


# -- config -----------------------------------------------------------------

def test_config_validation():
    for bad in ({"task_arrival": 1.5}, {"window": 0}, {"slots": 0}, {"window_mode": "sliding"},
                {"num_mecs": 2, "capacities": (1, 2, 3)}):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_config_round_trip():
    cfg = SimConfig(num_mecs=3, capacities=(5, 6, 7), seed=4)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown sim fields"):
        SimConfig.from_dict({"num_mec": 3})


def test_critical_ues():
    assert critical_ues(50, 0.6) == pytest.approx(30)
    assert critical_ues(50, 0.0) == 0
    assert critical_ues(70, 0.6) == pytest.approx(42)
    with pytest.raises(ValueError):
        critical_ues(0, 0.6)


# -- placement ----------------------------------------------------------------

def test_candidate_placement_respects_capacity_and_replication():
    cfg = SimConfig(num_mecs=4, capacity=10)
    cat = make_catalog(cfg, np.random.default_rng(0))
    servers = candidate_placement(cat, cfg.server_capacities(), replication=2)
    for s in servers:
        assert cat.storage(s.microservices(cat)) <= s.capacity
    counts = {}
    for s in servers:
        for x in s.placed_services:
            counts[x] = counts.get(x, 0) + 1
    assert max(counts.values()) <= 2
    # the most popular service gets both replicas
    assert counts[cat.by_popularity()[0].id] == 2


# -- slot behaviour -----------------------------------------------------------

def test_no_traffic_gives_null_rate():
    ms = simulate(SimConfig(task_arrival=0.0, slots=5, seed=1))
    assert all(m.subtasks == 0 and m.edge_offload_rate is None for m in ms)
    assert summarize(ms)["edge_offload_rate"] is None


def test_static_catalog_keeps_plan():
    cfg = SimConfig(service_arrival=0.0, slots=10, seed=3)
    rng = np.random.default_rng(3)
    state = initial_state(cfg, rng)
    first = state.plan
    for _ in range(cfg.slots):
        _, state = run_slot(state, cfg, rng)
        assert state.plan is first


def test_churn_redeploys():
    cfg = SimConfig(service_arrival=1.0, slots=3, seed=3)
    ms = simulate(cfg)
    assert [m.services for m in ms] == [21, 22, 23]


def test_rate_tracks_analytic_hit_rate():
    ms = simulate(SimConfig(num_mecs=4, num_ues=20, slots=50, seed=7))
    s = summarize(ms)
    assert s["subtasks"] >= 1000
    assert abs(s["edge_offload_rate"] - s["analytic_hit_rate"]) <= 0.05


def test_rates_in_unit_interval():
    for m in simulate(SimConfig(service_arrival=0.5, slots=20, seed=11)):
        for name in ("edge_offload_rate", "analytic_hit_rate", "theta", "eur"):
            v = getattr(m, name)
            assert v is None or 0.0 <= v <= 1.0


def test_first_slot_clips_unreachable_rate():
    cfg = SimConfig(num_mecs=2, capacity=3, required_rate=1.0, slots=2, seed=0)
    ms = simulate(cfg)
    assert 0 < ms[0].analytic_hit_rate < 1.0


def test_determinism():
    cfg = SimConfig(service_arrival=0.3, slots=15, seed=21)
    a, b = simulate(cfg), simulate(cfg)
    assert a == b
    assert metrics_to_csv(a, 21) == metrics_to_csv(b, 21)


def test_metrics_csv_layout():
    text = metrics_to_csv(simulate(SimConfig(task_arrival=0.0, slots=2, seed=0)), 0)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["seed"] + METRIC_FIELDS
    assert len(rows) == 3
    assert rows[1][METRIC_FIELDS.index("edge_offload_rate") + 1] == ""


# -- windows ------------------------------------------------------------------

def _window_delay(num_ues, window, seeds=range(10), slots=50):
    out = []
    for seed in seeds:
        cfg = SimConfig(num_ues=num_ues, window_mode="fixed", window=window, slots=slots,
                        seed=seed)
        out.append(summarize(simulate(cfg))["mean_delay"])
    return _mean(out)


def test_fixed_window_waits_for_full_batch():
    cfg = SimConfig(num_ues=2, window_mode="fixed", window=1000, slots=5, seed=0)
    ms = simulate(cfg)
    assert all(m.batches == 0 and m.subtasks == 0 for m in ms)
    assert ms[-1].pending > 0


def test_window_delay_unimodal_near_critical_point():
    at = _window_delay(30, 50)
    assert at <= _window_delay(15, 50)
    assert at <= _window_delay(60, 50)


def test_floating_window_dominates_fixed():
    grid = (10, 20, 30, 40)
    best_fixed = min(_window_delay(u, 50, seeds=range(5)) for u in grid)
    for u in grid:
        floating = _mean(summarize(simulate(SimConfig(num_ues=u, seed=s)))["mean_delay"]
                         for s in range(5))
        assert floating <= 1.1 * best_fixed


# -- EUR ----------------------------------------------------------------------

def test_eur_idle_empty_plan():
    assert compute_eur(None, [], {"M1": 5, "M2": 5}, 1.0) == 0.0


def test_eur_saturated():
    plan = DeploymentPlan(0.5, ("M1",), (), {"M1": frozenset({"x"})}, frozenset(), frozenset(),
                          footprint=10, redundant=0, achieved_rate=0.5)
    t = Target(MEC, "M1")
    sched = Schedule((ScheduleEntry(Subtask("UE1", 1), t, 0.0, 1.0, "pr"),), 1.0)
    assert compute_eur(plan, [sched], {"M1": 10}, 1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        compute_eur(plan, [sched], {"M1": 10}, 0.0)


def test_eur_recomputed_from_schedule_csv():
    plan = DeploymentPlan(0.5, ("M1", "M2"), (), {}, frozenset(), frozenset(),
                          footprint=6, redundant=0, achieved_rate=0.5)
    m1, m2, c = Target(MEC, "M1"), Target(MEC, "M2"), Target(CLOUD, "Cloud1")
    sched = Schedule((ScheduleEntry(Subtask("UE1", 1), m1, 0.0, 0.3, "pr"),
                      ScheduleEntry(Subtask("UE1", 2), m2, 0.3, 0.5, "pr"),
                      ScheduleEntry(Subtask("UE2", 1), c, 0.0, 0.9, "pd")), 0.9)
    caps = {"M1": 8, "M2": 12}
    busy = 0.0
    for row in list(csv.DictReader(io.StringIO(schedule_to_csv(sched)))):
        if row["target"].startswith("M"):
            busy += float(row["finish"]) - float(row["start"])
    want = 0.5 * 6 / 20 + 0.5 * busy / (2 * 1.0)
    assert compute_eur(plan, [sched], caps, 1.0) == pytest.approx(want)


# -- baselines ----------------------------------------------------------------

def test_unknown_baseline():
    with pytest.raises(ValueError):
        run_baseline("greedy", SimConfig())


def test_random_deploy_matches_when_everything_fits():
    cfg = SimConfig(num_services=8, capacity=100, required_rate=1.0, slots=15, seed=2)
    ours, rnd = simulate(cfg), run_baseline("random_deploy", cfg)
    assert [m.edge_offload_rate for m in ours] == [m.edge_offload_rate for m in rnd]


def test_fcfs_single_ue_identical():
    cfg = SimConfig(num_ues=1, slots=20, seed=5, task_arrival=1.0)
    a, b = simulate(cfg), run_baseline("no_priority_fcfs", cfg)
    assert a == b


def test_sd_aeto_beats_random_deploy_under_tight_capacity():
    ours, rnd = [], []
    for seed in range(20):
        cfg = SimConfig(capacity=9, slots=20, seed=seed)
        ours.append(summarize(simulate(cfg))["edge_offload_rate"])
        rnd.append(summarize(run_baseline("random_deploy", cfg))["edge_offload_rate"])
    assert np.mean(ours) >= np.mean(rnd)


def test_catalog_override_is_used():
    cfg = SimConfig(slots=2, seed=0)
    cat = make_catalog(replace(cfg, num_services=5), np.random.default_rng(9))
    assert isinstance(cat, ServiceCatalog)
    assert simulate(cfg, catalog=cat)[0].services == 5
