import numpy as np
import pytest
import trimesh
from scipy.spatial.transform import Rotation

from asmplan.assembly import Part
from asmplan.physics import (Action, ActionKind, BodyProps, Contact, RigidState, SimParams, SimulationDivergedError,
                             Simulator, contact_force, detect_contacts, pair_penetration, simulate)
from asmplan.stats_manager import StatsManager
from asmplan.transforms import from_scipy


def _part(part_id, extents, center):
    box = trimesh.creation.box(extents=extents)
    box.apply_translation(center)
    return Part.from_mesh(part_id, box)


@pytest.fixture(scope="module")
def slab():
    return _part("slab", (6.0, 6.0, 1.0), (0.0, 0.0, -0.5))


@pytest.fixture(scope="module")
def cube():
    return _part("cube", (1.0, 1.0, 1.0), (0.0, 0.0, 0.5))


def _contact(depth, rate=0.0):
    return Contact(point=np.zeros(3), depth=depth, normal=np.array([0.0, 0.0, 1.0]), depth_rate=rate,
                   tangential_velocity=np.zeros(3), other_id="o")


def test_contact_force_matches_penalty_law():
    force = contact_force(_contact(-0.001), k_n=1e6, k_d=0.0)
    assert np.linalg.norm(force) == pytest.approx(1000.0)
    np.testing.assert_allclose(force, [0.0, 0.0, 1000.0])


def test_contact_force_zero_at_surface():
    np.testing.assert_array_equal(contact_force(_contact(0.0), k_n=1e6, k_d=0.0), np.zeros(3))


def test_contact_damping_term():
    # (-k_n + k_d * d_dot) * d = (-1e6 + 10 * -2) * -0.001
    force = contact_force(_contact(-0.001, rate=-2.0), k_n=1e6, k_d=10.0)
    assert force[2] == pytest.approx(1000.02)


def test_box_mass_properties(unit_cube):
    props = BodyProps.from_mesh(unit_cube)
    assert props.mass == pytest.approx(1.0)
    np.testing.assert_allclose(props.inertia, np.eye(3) / 6.0, atol=1e-9)


def test_ballistic_motion_is_semi_implicit_euler(cube):
    simulator = Simulator({"cube": cube.body}, SimParams(), stats=StatsManager())
    start = RigidState(t=np.zeros(3))
    result = simulate(simulator, {"cube": start}, {"cube": Action(ActionKind.FORCE, (0.0, 0.0, 1.0), 1.0)},
                      dt=1.0, h=0.01)
    # a = 1, h = 0.01, 100 substeps: x = a h^2 n (n + 1) / 2
    assert result["cube"].t[2] == pytest.approx(0.505, rel=1e-9)
    assert result["cube"].t[0] == 0.0 and result["cube"].t[1] == 0.0


def test_unactuated_parts_stay_put(slab, cube):
    simulator = Simulator({"slab": slab.body, "cube": cube.body}, SimParams())
    states = {"slab": slab.assembled_state, "cube": cube.assembled_state}
    result = simulator.simulate(states, {"cube": None})
    assert result["cube"].same_pose(cube.assembled_state)
    assert simulator.stats.value("simulate_calls") == 1


def test_pressed_part_settles_within_threshold(slab, cube):
    simulator = Simulator({"slab": slab.body, "cube": cube.body}, SimParams())
    states = {"slab": slab.assembled_state, "cube": cube.assembled_state}
    result = simulator.simulate(states, {"cube": Action(ActionKind.FORCE, (0.0, 0.0, -1.0), 100.0)},
                                dt=1.0, h=1e-3)
    depth = pair_penetration(cube.body, result["cube"], slab.body, slab.assembled_state)
    assert depth <= 0.01
    assert abs(result["cube"].t[2] - 0.5) < 0.01


def test_detect_contacts_reports_depth_and_rate(slab):
    cube = _part("tilted", (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    corner = -np.ones(3) / np.sqrt(3.0)
    rotation, _ = Rotation.align_vectors([[0.0, 0.0, -1.0]], [corner])
    state = RigidState(t=np.array([0.0, 0.0, np.sqrt(3.0) / 2.0 - 0.001]), q=from_scipy(rotation),
                       v=np.array([0.0, 0.0, -2.0]))
    contacts = detect_contacts((cube.body, state), [(slab.body, slab.assembled_state)])
    assert len(contacts) == 1
    contact = contacts[0]
    assert contact.depth == pytest.approx(-0.001, abs=1e-4)
    np.testing.assert_allclose(contact.normal, [0.0, 0.0, 1.0], atol=1e-3)
    assert contact.depth_rate == pytest.approx(-2.0, abs=1e-2)
    assert contact.other_id == "slab"


def test_no_contacts_when_apart(slab, cube):
    lifted = RigidState(t=cube.assembled_state.t + np.array([0.0, 0.0, 3.0]))
    assert detect_contacts((cube.body, lifted), [(slab.body, slab.assembled_state)]) == []
    assert pair_penetration(cube.body, lifted, slab.body, slab.assembled_state) == 0.0


def test_divergence_is_reported(cube):
    simulator = Simulator({"cube": cube.body}, SimParams())
    with pytest.raises(SimulationDivergedError):
        simulator.simulate({"cube": RigidState(t=np.zeros(3))},
                           {"cube": Action(ActionKind.FORCE, (1.0, 0.0, 0.0), 1e9)}, dt=0.1, h=1e-3)


def test_action_record_round_trip():
    action = Action(ActionKind.TORQUE, (0.0, 0.0, -1.0), 100.0)
    assert Action.from_record(action.to_record()) == action
    assert Action.from_record(None) is None
    assert action.label == "-tz"


def test_scene_dump(tmp_path, cube):
    path = tmp_path / "scene.txt"
    simulator = Simulator({"cube": cube.body}, SimParams(), scene_dump_path=str(path))
    simulator.simulate({"cube": RigidState(t=np.zeros(3))},
                       {"cube": Action(ActionKind.FORCE, (0.0, 0.0, 1.0), 1.0)}, dt=0.01, h=0.001)
    lines = path.read_text().splitlines()
    assert len(lines) == 10
    assert lines[0].split()[0] == "cube" and len(lines[0].split()) == 8
