import json
import subprocess
import sys

import pytest

from conftest import DATA, bundled
from sdaeto.cli import ScenarioError, load_scenario, main, parse_scenario, parse_values


def run(argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture
def scen(tmp_path):
    def write(data, name="s.json"):
        p = tmp_path / name
        p.write_text(data if isinstance(data, str) else json.dumps(data))
        return p
    return write


# -- deploy -----------------------------------------------------------------

def test_deploy_two_server(two_server_path, tmp_path, capsys):
    out = tmp_path / "plan.json"
    assert run(["deploy", two_server_path, "--rate", 0.9, "--out", out]) == 0
    plan = json.loads(out.read_text())
    assert plan["footprint"] == 4 and plan["servers"] == ["M1", "M2"]
    assert "footprint 4" in capsys.readouterr().err


def test_deploy_zero_rate(two_server_path, capsys):
    assert run(["deploy", two_server_path, "--rate", 0]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["servers"] == [] and plan["footprint"] == 0


def test_deploy_rate_out_of_range(two_server_path, capsys):
    assert run(["deploy", two_server_path, "--rate", 1.01]) == 1
    assert "outside [0, 1]" in capsys.readouterr().err


def test_deploy_infeasible(scen, capsys):
    p = scen({"catalog": {"services": [
        {"id": "a", "popularity": 0.5, "microservices": ["x"]},
        {"id": "b", "popularity": 0.5, "microservices": ["y"]}]},
        "servers": [{"id": "M1", "capacity": 1, "services": ["a"]}]})
    assert run(["deploy", p, "--rate", 0.9]) == 2
    assert "required rate unreachable" in capsys.readouterr().err


# -- schedule ---------------------------------------------------------------

def test_schedule_five_subtasks_golden(five_subtasks_path, five_subtasks_plan_path, tmp_path, capsys):
    out = tmp_path / "sched.csv"
    assert run(["schedule", five_subtasks_path, "--plan", five_subtasks_plan_path, "--out", out]) == 0
    assert out.read_text() == (DATA / "five_subtasks_schedule.csv").read_text()
    assert capsys.readouterr().out.strip() == "T_total 18"


def test_schedule_without_tasks(scen, capsys):
    p = scen({"catalog": {"services": [{"id": "a", "popularity": 1.0, "microservices": ["x"]}]},
              "servers": [{"id": "M1", "capacity": 1, "services": ["a"]}]})
    assert run(["schedule", p]) == 0
    out = capsys.readouterr().out
    assert out.splitlines() == ["subtask,target,start,finish", "T_total 0"]


def test_schedule_hosted_nowhere(capsys):
    assert run(["schedule", bundled("hosted_nowhere.json")]) == 2
    err = capsys.readouterr().err
    assert "UE2.1" in err and "UE1.1" not in err


# -- simulate / sweep -------------------------------------------------------

def test_simulate_writes_csv_and_summary(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert run(["simulate", bundled("default_sim.json"), "--seed", 3, "--slots", 5,
                "--out", out]) == 0
    assert len(out.read_text().splitlines()) == 6
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert summary["seed"] == 3 and "artifact definition" in summary["eur_definition"]


def test_seed_is_mandatory(capsys):
    assert run(["simulate", bundled("default_sim.json")]) == 1
    assert "--seed" in capsys.readouterr().err


def test_sweep_file_count(tmp_path):
    out = tmp_path / "bs"
    args = ["sweep", bundled("default_sim.json"), "--seed", 1, "--slots", 3, "--param", "bs",
            "--values", "0.1:0.9:0.2", "--out", out]
    assert run(args) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == [f"bs_{i:03d}.csv" for i in range(5)] + ["manifest.json"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert [p["value"] for p in manifest["points"]] == [0.1, 0.3, 0.5, 0.7, 0.9]


def test_sweep_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["sweep", bundled("default_sim.json"), "--seed", 4, "--slots", 4,
                    "--param", "mecs", "--values", "1,2,4", "--runs", 2, "--out", out]) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]


def test_sweep_workers_match_serial(tmp_path):
    texts = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        assert run(["sweep", bundled("default_sim.json"), "--seed", 2, "--slots", 3,
                    "--param", "ues", "--values", "5,10", "--workers", workers, "--out", out]) == 0
        texts.append([(out / f"ues_{i:03d}.csv").read_text() for i in range(2)])
    assert texts[0] == texts[1]


def test_sweep_unknown_param(tmp_path, capsys):
    assert run(["sweep", bundled("default_sim.json"), "--seed", 1, "--param", "speed",
                "--values", "1,2", "--out", tmp_path]) == 1
    assert "unknown sweep parameter 'speed'" in capsys.readouterr().err


def test_parse_values():
    assert parse_values("0.1:0.5:0.2", "bs") == [0.1, 0.3, 0.5]
    assert parse_values("1,2,4,8", "mecs") == [1, 2, 4, 8]
    for bad, param in (("1.5", "mecs"), ("0:1", "bs"), ("0:1:0", "bs"), ("", "bs")):
        with pytest.raises(ValueError):
            parse_values(bad, param)


# -- verify -----------------------------------------------------------------

def test_verify_deployed_plan(two_server_path, tmp_path, capsys):
    plan = tmp_path / "plan.json"
    assert run(["deploy", two_server_path, "--rate", 0.9, "--out", plan]) == 0
    assert run(["verify", two_server_path, "--plan", plan]) == 0
    assert capsys.readouterr().err.strip().endswith("ok")


def test_verify_catches_tampered_plan(two_server_path, tmp_path, capsys):
    plan = tmp_path / "plan.json"
    run(["deploy", two_server_path, "--rate", 0.9, "--out", plan])
    data = json.loads(plan.read_text())
    data["footprint"] = 3
    plan.write_text(json.dumps(data))
    assert run(["verify", two_server_path, "--plan", plan]) == 2
    assert "recomputed 4" in capsys.readouterr().out


def test_verify_schedule(five_subtasks_path, five_subtasks_plan_path, tmp_path, capsys):
    golden = DATA / "five_subtasks_schedule.csv"
    assert run(["verify", five_subtasks_path, "--plan", five_subtasks_plan_path, "--schedule", golden]) == 0
    bad = tmp_path / "bad.csv"
    bad.write_text(golden.read_text().replace("UE2.2,M1,16,18", "UE2.2,M1,-1,1"))
    assert run(["verify", five_subtasks_path, "--plan", five_subtasks_plan_path, "--schedule", bad]) == 2
    out = capsys.readouterr().out
    assert "(36g)" in out and "(36c)" in out


# -- scenario validation ----------------------------------------------------

BASE = {"catalog": {"services": [{"id": "a", "popularity": 1.0, "microservices": ["x"]}]},
        "servers": [{"id": "M1", "capacity": 1, "services": ["a"]}],
        "ues": {"ids": ["UE1"]}}


@pytest.mark.parametrize("patch, needle", [
    ({"servers": [{"id": "M1", "capacity": 1, "services": ["zz"]}]}, "unknown service 'zz'"),
    ({"servers": [{"id": "M1", "capacity": 1, "microservices": ["q"]}]}, "unknown microservice 'q'"),
    ({"servers": [{"id": "M1", "capacity": 1}, {"id": "M1", "capacity": 1}]}, "duplicate id 'M1'"),
    ({"ues": {"ids": ["UE1"], "caches": {"UE9": []}}}, "unknown UE 'UE9'"),
    ({"ues": {"ids": ["UE1"], "caches": {"UE1": ["q"]}}}, "unknown microservice 'q'"),
    ({"tasks": [{"ue": "UE7", "index": 1, "service": "a", "microservice": "x"}]}, "unknown UE 'UE7'"),
    ({"tasks": [{"ue": "UE1", "index": 1, "service": "b", "microservice": "x"}]}, "unknown service 'b'"),
    ({"tasks": [{"ue": "UE1", "index": 1, "service": "a", "microservice": "y"}]}, "'y' is not part"),
    ({"tasks": [{"ue": "UE1", "index": 1, "service": "a"}]}, "missing field 'microservice'"),
    ({"latency": {"mode": "psychic"}}, "unknown mode 'psychic'"),
    ({"sim": {"num_mec": 2}}, "unknown sim fields"),
    ({"extra": 1}, "unknown sections"),
])
def test_scenario_errors_name_the_id(patch, needle):
    with pytest.raises(ScenarioError, match=needle):
        parse_scenario({**BASE, **patch})


def test_explicit_latency_rejects_unknown_target():
    data = {**BASE, "tasks": [{"ue": "UE1", "index": 1, "service": "a", "microservice": "x"}],
            "latency": {"mode": "explicit", "table": {"UE1.1": {"M9": 1}}}}
    with pytest.raises(ScenarioError, match="unknown target 'M9'"):
        parse_scenario(data)


def test_json_error_has_position(scen, capsys):
    p = scen('{"catalog": {\n  "services": [,]}}')
    with pytest.raises(ScenarioError, match="line 2 column"):
        load_scenario(p)
    assert run(["deploy", p, "--rate", 0.5]) == 1


def test_bundled_fixtures_load():
    for name in ("two_server.json", "five_subtasks.json", "hosted_nowhere.json", "default_sim.json",
                 "high_overlap.json"):
        load_scenario(bundled(name))


def test_module_entry_point(two_server_path):
    proc = subprocess.run([sys.executable, "-m", "sdaeto.cli", "deploy", str(two_server_path),
                           "--rate", "0.9"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["footprint"] == 4
