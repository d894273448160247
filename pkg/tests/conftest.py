import json
import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TESTS = Path(__file__).parent
DATA = TESTS / "data"
PKG_DATA = resources.files("sdaeto") / "data"


def bundled(name) -> Path:
    return Path(str(PKG_DATA / name))


@pytest.fixture
def two_server_path():
    return bundled("two_server.json")


@pytest.fixture
def five_subtasks_path():
    return bundled("five_subtasks.json")


@pytest.fixture
def five_subtasks_plan_path():
    return bundled("five_subtasks_plan.json")


@pytest.fixture
def five_subtasks():
    """Catalog, plan, subtasks, matrix and priorities of the five-subtask example."""
    from sdaeto.cli import scenario_matrix, load_plan, load_scenario
    from sdaeto.offload import integration_priority

    sc = load_scenario(bundled("five_subtasks.json"))
    plan = load_plan(bundled("five_subtasks_plan.json"), sc)
    matrix = scenario_matrix(sc, plan)
    prio = {st: integration_priority(matrix, st, sc.catalog) for st in sc.subtasks}
    by_label = {st.label: st for st in sc.subtasks}
    return sc, plan, matrix, prio, by_label


def load_json(path):
    return json.loads(Path(path).read_text())
