import math

import numpy as np
import pytest

from aapd.matching import HardwareClass
from aapd.robot import RobotState
from aapd.sim import (
    Action, ConfigError, DetectionConfig, DetectionKind, ExperimentLog, ScenarioConfig, apply_detection_action,
    gradual, initial_positions, oracle_detector, replay, run_experiment, spontaneous, static, step, stream,
)
from aapd.behavior import Arena


def offline_config(**kw):
    base = dict(n_robots=10, seed=21, faults=[gradual("lr", (0.9, 1.0))] + [static()] * 9,
                detection=DetectionConfig(DetectionKind.OFFLINE))
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture(scope="module")
def offline_log():
    return run_experiment(offline_config(), run=0)


@pytest.fixture(scope="module")
def oracle_log():
    cfg = ScenarioConfig(n_robots=10, seed=8, p_max=1.0, faults=[gradual(d_range=(0.75, 1.0))] * 10,
                         detection=DetectionConfig(DetectionKind.ORACLE, d0=0.75))
    return run_experiment(cfg)


def test_tick_and_cycle_budget(offline_log):
    assert offline_log.ticks == 5400
    assert len(offline_log.cycles) == 18
    assert [c.time for c in offline_log.cycles] == [50.0 * k for k in range(1, 19)]


def test_determinism_short_run():
    cfg = offline_config(duration=120.0, seed=3)
    assert run_experiment(cfg).to_csv() == run_experiment(cfg).to_csv()
    assert run_experiment(cfg).to_csv() != run_experiment(cfg.replace(seed=4)).to_csv()


def test_streams_are_independent_of_swarm_size():
    a = stream(5, 2, "physics").standard_normal(4)
    b = stream(5, 2, "physics").standard_normal(4)
    c = stream(5, 3, "physics").standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_csv_round_trip(offline_log):
    back = ExperimentLog.from_csv(offline_log.to_csv())
    assert back.ticks == offline_log.ticks and back.n_robots == offline_log.n_robots
    for k, v in offline_log.data.items():
        assert np.array_equal(back.data[k], v), k
    assert back.resources == offline_log.resources
    assert back.power_consumed() == offline_log.power_consumed()


def test_replay_reproduces_online_offline_mode(offline_log):
    again = replay(ExperimentLog.from_csv(offline_log.to_csv()))
    assert np.array_equal(again.detected(), offline_log.detected())
    assert [(d.robot, d.tick, d.hardware_class) for d in again.detections] == \
        [(d.robot, d.tick, d.hardware_class) for d in offline_log.detections]
    twice = replay(offline_log)
    assert [d.levels for d in twice.detections] == [d.levels for d in again.detections]


def test_detections_are_annotated(offline_log):
    for d in offline_log.detections:
        t = d.tick - 1
        dl, dr, ds = (offline_log.data[k][t, d.robot] for k in ("d_l", "d_r", "d_s"))
        assert d.delta == (min(dl, dr) if d.hardware_class is HardwareClass.MOTOR else ds)
        assert all(lv > 1.0 for lv in d.levels)


def test_oracle_triggers_at_threshold(oracle_log):
    assert oracle_log.events_of("detect")
    pending = {r: set() for r in range(oracle_log.n_robots)}
    triggers = 0
    for e in oracle_log.events:
        r = e.get("robot")
        if e["kind"] == "repair":
            pending[r] -= set(e["classes"])
        elif e["kind"] == "detect":
            d_l, d_r, d_s = e["d"]
            for hw in e["classes"]:
                assert 0.74 <= (min(d_l, d_r) if hw == "Motor" else d_s) < 0.75
            if not pending[r]:
                # the detection that sends the robot home; a class already pending keeps degrading en route
                assert 0.74 <= min(e["d"]) < 0.75
                triggers += 1
            pending[r] |= set(e["classes"])
            assert oracle_detector(e["d"], 0.75)
    assert triggers > 0


def test_energy_audit(oracle_log):
    p = oracle_log.data["power"]
    assert p.min() >= 0.0
    consumed = oracle_log.power_consumed()
    recharged = sum(e["amount"] for e in oracle_log.events_of("recharge"))
    assert oracle_log.events_of("recharge")
    assert consumed == pytest.approx(oracle_log.n_robots * 1.0 - p[-1].sum() + recharged, abs=1e-9)


def test_repair_restores_only_detected_class(oracle_log):
    d = oracle_log.data
    repairs = [e for e in oracle_log.events_of("repair") if e["classes"] == ["Sensor"]]
    assert repairs
    for e in repairs:
        t, r = e["tick"] - 1, e["robot"]
        assert d["d_s"][t, r] >= 0.75
        # motor coefficients carry on from the previous tick (at most one decrement)
        assert d["d_l"][t - 1, r] - d["d_l"][t, r] in (0.0, pytest.approx(0.01))


def test_resources_match_deposit_events(oracle_log):
    assert oracle_log.resources == len(oracle_log.events_of("deposit"))
    carrying = oracle_log.data["carrying"]
    drops = np.argwhere(carrying[:-1] & ~carrying[1:])
    for t, r in drops:
        assert Arena.empty().in_base(oracle_log.data["x"][t + 1, r], oracle_log.data["y"][t + 1, r])


def test_oracle_detector_examples():
    assert oracle_detector((0.8, 0.8, 0.74), 0.75)
    assert not oracle_detector((0.76, 0.76, 0.76), 0.75)
    assert not oracle_detector((0.75, 0.9, 0.9), 0.75)


def test_sweep_endpoints_order_detection_times():
    def first_detect(d0):
        cfg = ScenarioConfig(n_robots=5, seed=12, duration=400.0, faults=[gradual(d_range=(0.95, 1.0))] * 5,
                             detection=DetectionConfig(DetectionKind.ORACLE, d0=d0), action=Action.INSTANT_RESET)
        ev = run_experiment(cfg).events_of("detect")
        return {r: min([e["tick"] for e in ev if e["robot"] == r], default=math.inf) for r in range(5)}
    early, late = first_detect(0.95), first_detect(0.6)
    assert all(early[r] <= late[r] for r in range(5))
    assert any(early[r] < late[r] for r in range(5))


def test_detection_actions():
    r = RobotState(0, 5, 5, 0, d_l=0.5, d_r=0.6, d_s=0.4, init_d=(0.9, 0.9, 0.9))
    apply_detection_action(r, [HardwareClass.MOTOR], Action.INSTANT_RESET)
    assert r.d == (0.9, 0.9, 0.4)
    apply_detection_action(r, [HardwareClass.SENSOR], Action.RETURN_TO_BASE)
    assert r.faulty[HardwareClass.SENSOR] and r.d_s == 0.4
    r.status = r.status.LOST
    assert not apply_detection_action(r, [HardwareClass.MOTOR], Action.INSTANT_RESET)


def test_instant_reset_keeps_robot_healthy_under_oracle():
    cfg = ScenarioConfig(n_robots=4, seed=2, duration=300.0, faults=[gradual(d_range=(0.76, 0.8))] * 4,
                         detection=DetectionConfig(DetectionKind.ORACLE, d0=0.75), action=Action.INSTANT_RESET)
    log = run_experiment(cfg)
    d = np.minimum(np.minimum(log.data["d_l"], log.data["d_r"]), log.data["d_s"])
    assert d.min() >= 0.75
    assert not log.events_of("repair")


def test_spontaneous_and_step_schedules():
    cfg = ScenarioConfig(n_robots=3, seed=1, duration=30.0,
                         faults=[spontaneous("H1", 10.0), step(20.0, d_range=(0.9, 0.9)), static()])
    log = run_experiment(cfg)
    assert log.data["d_l"][59, 0] == 0.0 and log.data["d_l"][58, 0] > 0.75
    assert log.data["d_s"][119, 1] == pytest.approx(0.6)
    assert log.data["d_s"][118, 1] == pytest.approx(0.9)


def test_spontaneous_motor_failure_ends_lost_outside_base():
    cfg = ScenarioConfig(n_robots=3, seed=1, duration=60.0, faults=[spontaneous("H1", 30.0), static(), static()])
    log = run_experiment(cfg)
    assert log.lost_robots() == [0]
    assert log.events_of("lost")[0]["cause"] == "immobile"


def test_initial_positions():
    pos = initial_positions(10, Arena.empty())
    assert np.allclose(pos[:, 1], 2.0) and np.isclose(pos[:, 0].mean(), 5.0)
    pos = initial_positions(10, Arena.constrained())
    assert all(Arena.constrained().disc_free(x, y, 0.15) for x, y in pos)


@pytest.mark.parametrize("kw", [
    dict(n_robots=1, faults=[static()]),
    dict(n_robots=21),
    dict(algorithm="RANDOM"),
    dict(faults=[static()] * 3),
    dict(duration=0.1),
    dict(duration=-5.0),
    dict(p_max=0.0),
    dict(arena="maze"),
    dict(replicates=0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


def test_config_detection_validation():
    with pytest.raises(ConfigError):
        DetectionConfig(DetectionKind.ORACLE, d0=1.0)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"n_robots": 5, "bogus": 1})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"version": 7})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_json("{not json")


def test_config_round_trip(tmp_path):
    cfg = ScenarioConfig(n_robots=4, p_max=1.0, seed=9, faults=[gradual(), static(), spontaneous("H2", 5.0), step()],
                         detection=DetectionConfig(DetectionKind.AAPD, order=1))
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    back = ScenarioConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    inf = ScenarioConfig.from_json(ScenarioConfig().to_json())
    assert math.isinf(inf.p_max)
