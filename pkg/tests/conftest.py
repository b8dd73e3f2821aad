import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minipilot.analytics import compute_utilization, load_trace
from minipilot.emulator import TaskPayload
from minipilot.model import Backend, PilotDescription, UnitDescription
from minipilot.runtime import Session, run_session


def make_units(n, cores=4, payload=None, prefix="unit"):
    payload = payload or TaskPayload("sleep", 3.0, 0.0)
    return [UnitDescription(unit_id=f"{prefix}.{i:06d}", cores=cores,
                            payload=payload) for i in range(n)]


def make_pilot(nodes=2, cores_per_node=16, walltime=1e9,
               backend=Backend.VIRTUAL):
    return PilotDescription("local", nodes, cores_per_node, walltime,
                            backend=backend)


def run_virtual(tmp_path, units, pilot=None, **kwargs):
    pilot = pilot or make_pilot()
    session = Session(session_id=kwargs.pop("session_id", "t"),
                      pilot=pilot, units=units,
                      out_dir=Path(tmp_path), **kwargs)
    result = run_session(session)
    return result, load_trace(result.trace_path)


def assert_closure(trace, pilot_cores=None):
    """Utilization shares must close to 100% on every trace we produce."""
    util = compute_utilization(trace, pilot_cores)
    total = util["workload_pct"] + util["overhead_pct"] + util["idle_pct"]
    assert abs(total - 100.0) <= 0.1, f"closure broke: {total}"
    return util


@pytest.fixture
def units8():
    return make_units(8)
