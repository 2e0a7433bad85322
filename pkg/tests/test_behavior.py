import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aapd import behavior as bh
from aapd.behavior import Arena, ControllerState, Mode, World, gpf_step, lpf_step, network_connected
from aapd.matching import HardwareClass
from aapd.robot import RobotState


def world(positions, ranges=None, arena=None, networked=None):
    pos = np.asarray(positions, float)
    r = np.full(len(pos), 4.0) if ranges is None else np.asarray(ranges, float)
    return World(arena or Arena.empty(), pos, r, ["Active"] * len(pos), networked)


def robot(x, y, heading=math.pi / 2, **kw):
    return RobotState(0, x, y, heading, **kw)


def test_arena_geometry():
    a = Arena.empty()
    assert a.in_base(3.0, 2.0) and not a.in_base(3.0, 2.01)
    assert a.nearest_nest(5.0, 7.5) == (1, pytest.approx(0.5))
    c = Arena.constrained()
    assert c.corridor_centres() == [2.0, 5.0, 8.0]
    # each corridor is 2 m wide and 5 m long
    spans = sorted((w.x0, w.x1) for w in c.walls)
    assert [b[0] - a_[1] for a_, b in zip(spans, spans[1:])] == [2.0, 2.0, 2.0]
    assert all(w.y1 - w.y0 == 5.0 for w in c.walls)
    assert Arena.build("Constrained").kind is bh.ArenaKind.CONSTRAINED
    with pytest.raises(ValueError):
        Arena.build("maze")


def test_gpf_avoids_close_object():
    r = robot(5.0, 9.25)  # wall 0.75 m ahead, 0.6 m from the body edge
    cmd = gpf_step(r, ControllerState(), world([[5.0, 9.25]]), False)
    assert cmd.mode is not Mode.AVOID
    r = robot(5.0, 5.0)
    cmd = gpf_step(r, ControllerState(), world([[5.0, 5.0], [5.0, 5.7]]), False)
    assert cmd.mode is Mode.AVOID
    assert cmd.left == -cmd.right != 0  # pure rotation


def test_gpf_collects_and_deposits():
    cmd = gpf_step(robot(5.0, 7.3), ControllerState(), world([[5.0, 7.3]]), False)
    assert cmd.mode is Mode.COLLECT and "collect" in cmd.events
    cmd = gpf_step(robot(5.0, 1.0, carrying=True), ControllerState(), world([[5.0, 1.0]]), False)
    assert cmd.mode is Mode.DEPOSIT and cmd.events == ("deposit",)


def test_gpf_return_priorities():
    r = robot(5.0, 1.0)
    r.faulty[HardwareClass.SENSOR] = True
    cmd = gpf_step(r, ControllerState(), world([[5.0, 1.0]]), True)
    assert set(cmd.events) == {"recharge", "repair"}
    cmd = gpf_step(robot(5.0, 5.0, carrying=True), ControllerState(), world([[5.0, 5.0]]), False)
    assert cmd.mode is Mode.RETURN


def test_gpf_approach_and_forward():
    cmd = gpf_step(robot(5.0, 4.0), ControllerState(), world([[5.0, 4.0]]), False)
    assert cmd.mode is Mode.APPROACH
    cmd = gpf_step(robot(5.0, 4.0), ControllerState(), world([[5.0, 4.0]], ranges=[1.0]), False)
    assert cmd.mode is Mode.FORWARD and cmd.left == cmd.right == 1.0


def test_lpf_wait_collect_explore():
    w = world([[5.0, 6.0]], networked=np.array([False]))
    cmd = lpf_step(robot(5.0, 6.0), ControllerState(), w, 1 / 6)
    assert cmd.mode is Mode.WAIT and not cmd.moving
    w = world([[5.0, 7.55]], networked=np.array([True]))
    assert lpf_step(robot(5.0, 7.55), ControllerState(), w, 1 / 6).mode is Mode.COLLECT
    # 0.6 m from the centre collects under GPF but not under LPF
    w = world([[5.0, 7.4]], networked=np.array([True]))
    assert lpf_step(robot(5.0, 7.4), ControllerState(), w, 1 / 6).mode is not Mode.COLLECT
    w = world([[5.0, 3.0]], ranges=[1.0], networked=np.array([True]))
    cmd = lpf_step(robot(5.0, 3.0), ControllerState(), w, 1 / 6, np.random.default_rng(0))
    assert cmd.mode is Mode.EXPLORE


def test_network_chain():
    a = Arena.empty()
    net, hop = network_connected(np.array([[5.0, 1.0]]), np.array([4.0]), a)
    assert net[0] and hop[0] == 0.0
    # B 2.5 m above the base, C a further 2.5 m past B whose range is only 2 m
    pos = np.array([[5.0, 4.5], [5.0, 7.0]])
    net, hop = network_connected(pos, np.array([2.0, 4.0]), a)
    assert net.tolist() == [True, False] and math.isinf(hop[1])
    net, _ = network_connected(pos, np.array([4.0, 4.0]), a)
    assert net.tolist() == [True, True]
    # hop limit of 3 m applies even with long ranges
    net, hop = network_connected(np.array([[5.0, 5.5]]), np.array([4.0]), a)
    assert not net[0]


def test_healthy_mesh_connected():
    xs = np.linspace(1, 9, 5)
    pos = np.array([[x, y] for x in xs for y in (3.0, 5.0, 7.0)])
    net, _ = network_connected(pos, np.full(len(pos), 4.0), Arena.empty())
    assert net.all()


def test_return_to_base_heading():
    cmd = bh.return_to_base_step(5.0, 8.0, -math.pi / 2, Arena.empty())
    assert cmd.mode is Mode.RETURN and cmd.left == cmd.right == 1.0
    assert bh.return_to_base_step(5.0, 1.0, 0.0, Arena.empty()).events == ("arrive",)
    # constrained arena: head for a corridor mouth first
    cmd = bh.return_to_base_step(3.5, 8.0, -math.pi / 2, Arena.constrained())
    assert cmd.mode is Mode.RETURN


def test_escape_holds_heading():
    ctrl = ControllerState(avoid_dir=1)
    ctrl.escape = 1.0
    cmd = bh._avoidance(ctrl, 0.3, math.inf, 0.0, math.inf, None, 1 / 6)
    assert cmd.mode is Mode.AVOID and ctrl.escape_heading == 0.3
    cmd = bh._avoidance(ctrl, 0.5, math.inf, 0.0, math.inf, None, 1 / 6)
    assert cmd.right < cmd.left  # turns back toward the held heading


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_steer_turns_toward_target(h, target):
    cmd = bh.steer(h, target, Mode.FORWARD)
    e = bh.wrap_angle(target - h)
    if abs(e) > 1e-6:
        assert math.copysign(1, cmd.right - cmd.left) == math.copysign(1, e)
    assert -1 <= cmd.left <= 1 and -1 <= cmd.right <= 1


@pytest.mark.parametrize("arena", ["empty", "constrained"])
def test_trajectories_never_penetrate_walls(arena):
    from aapd.sim import ScenarioConfig, gradual, run_experiment
    cfg = ScenarioConfig(n_robots=10, arena=arena, duration=200.0, seed=5,
                         faults=[gradual(d_range=(0.75, 1.0))] * 10)
    log = run_experiment(cfg)
    a = Arena.build(arena)
    x, y = log.data["x"], log.data["y"]
    r = 0.15 - 1e-9
    for t in range(0, log.ticks, 3):
        for i in range(10):
            assert a.disc_free(x[t, i], y[t, i], r), (t, i, x[t, i], y[t, i])
