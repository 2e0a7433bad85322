"""Deterministic fixed-step swarm foraging simulation.

One tick is 1/6 s. Per tick, in order: degradation and scheduled faults,
controllers, physics and power, sensing and window sampling, paratope
extraction (every 5 s), AAPD cycles (every 50 s), detection actions,
logging.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import behavior as bh
from .dynamics import D0, DEFAULT_COEFFS, AAPDEngine, CycleResult, Detection, DynamicsCoeffs, label_from_truth
from .matching import HardwareClass, Paratope
from .repertoire import (
    PARATOPE_LENGTH,
    SAMPLE_RATE,
    WINDOW_CAPACITY,
    Category,
    LabeledRepertoire,
    normalize_channel,
)
from .robot import (
    CONSTANTS,
    Fault,
    RobotState,
    Status,
    background_power,
    compute_gamma,
    degrade_tick,
    inject_fault,
    sensing_range,
    step_change,
    step_pose,
    velocity_cap,
    wheel_power,
)

CONFIG_VERSION = 1
TICKS_PER_SECOND = SAMPLE_RATE
PARATOPE_TICKS = PARATOPE_LENGTH  # one paratope per 5 s
CYCLE_TICKS = WINDOW_CAPACITY  # one AAPD cycle per 50 s
IMMOBILE_SPEED = 0.01  # m/s, both wheel caps below this outside the base => Lost
LPF_MIN_MOVING = 5  # robots (self included) that must be moving for motor updates under LPF

_PURPOSES = {"init": 0, "degrade": 1, "physics": 2, "range": 3, "control": 4}


class ConfigError(ValueError):
    pass


def stream(seed: int, robot: int, purpose: str) -> np.random.Generator:
    """Independent counter-based generator for one (robot, purpose) pair."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(robot), _PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


class FaultKind(str, Enum):
    NONE = "none"
    STATIC = "static"
    GRADUAL = "gradual"
    SPONTANEOUS = "spontaneous"
    STEP_CHANGE = "step_change"


@dataclass
class FaultSchedule:
    """How one robot's degradation coefficients evolve.

    ``d_range`` bounds the uniform initial draw of ``d_l, d_r, d_s``
    (``None`` means all start at 1). ``coeffs`` picks which of ``"l"``,
    ``"r"``, ``"s"`` degrade or are affected by a step change.
    """

    kind: FaultKind = FaultKind.NONE
    d_range: Optional[tuple] = None
    p_range: tuple = (0.01, 0.15)
    coeffs: str = "lrs"
    fault: Optional[Fault] = None
    time: float = 0.0
    factor: float = 2.0 / 3.0

    def __post_init__(self):
        self.kind = FaultKind(self.kind)
        if self.fault is not None:
            self.fault = Fault(self.fault)
        if self.d_range is not None:
            lo, hi = self.d_range
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"bad d_range {self.d_range}")
            self.d_range = (float(lo), float(hi))
        lo, hi = self.p_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"bad p_range {self.p_range}")
        self.p_range = (float(lo), float(hi))
        if set(self.coeffs) - set("lrs"):
            raise ConfigError(f"coeffs must be drawn from 'lrs', got {self.coeffs!r}")
        if self.kind is FaultKind.SPONTANEOUS and self.fault is None:
            raise ConfigError("spontaneous schedule needs a fault (H1, H2, H3)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["fault"] = self.fault.value if self.fault is not None else None
        d["d_range"] = list(self.d_range) if self.d_range is not None else None
        d["p_range"] = list(self.p_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSchedule":
        d = dict(d)
        if d.get("d_range") is not None:
            d["d_range"] = tuple(d["d_range"])
        if d.get("p_range") is not None:
            d["p_range"] = tuple(d["p_range"])
        return cls(**d)


def static(lo: float = 0.75, hi: float = 1.0) -> FaultSchedule:
    return FaultSchedule(FaultKind.STATIC, (lo, hi))


def gradual(coeffs: str = "lrs", d_range=None, p_range=(0.01, 0.15)) -> FaultSchedule:
    return FaultSchedule(FaultKind.GRADUAL, d_range, p_range, coeffs)


def spontaneous(fault, time: float = 0.0, d_range=(0.75, 1.0)) -> FaultSchedule:
    return FaultSchedule(FaultKind.SPONTANEOUS, d_range, fault=Fault(fault), time=time)


def step(time: float = 300.0, factor: float = 2.0 / 3.0, d_range=(0.75, 1.0), coeffs: str = "lrs") -> FaultSchedule:
    return FaultSchedule(FaultKind.STEP_CHANGE, d_range, coeffs=coeffs, time=time, factor=factor)


class DetectionKind(str, Enum):
    NONE = "none"
    ORACLE = "oracle"
    AAPD = "aapd"  # online, acts on detections
    OFFLINE = "offline"  # AAPD runs alongside but never acts


class Action(str, Enum):
    INSTANT_RESET = "instant_reset"
    RETURN_TO_BASE = "return_to_base"


@dataclass
class DetectionConfig:
    mode: DetectionKind = DetectionKind.NONE
    d0: float = D0
    order: int = 0
    y_motor: Optional[str] = None  # path to a serialized repertoire
    y_sensor: Optional[str] = None
    classes: tuple = ("Motor", "Sensor")

    def __post_init__(self):
        self.mode = DetectionKind(self.mode)
        self.classes = tuple(HardwareClass(c).value for c in self.classes)
        if self.mode is DetectionKind.ORACLE and not 0.0 < self.d0 < 1.0:
            raise ConfigError(f"oracle d0 must lie in (0, 1), got {self.d0}")


@dataclass
class ScenarioConfig:
    n_robots: int = 10
    algorithm: str = "GPF"
    arena: object = "empty"
    duration: float = 900.0
    p_max: float = math.inf
    faults: List[FaultSchedule] = field(default_factory=list)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    action: Action = Action.RETURN_TO_BASE
    seed: int = 0
    replicates: int = 1
    battery_low: float = 0.25  # fraction of p_max
    coeffs: Optional[Dict[str, dict]] = None  # per-class DynamicsCoeffs overrides
    clear_on_repair: bool = True

    def __post_init__(self):
        self.algorithm = str(self.algorithm).upper()
        self.action = Action(self.action)
        if isinstance(self.detection, dict):
            self.detection = DetectionConfig(**self.detection)
        self.faults = [f if isinstance(f, FaultSchedule) else FaultSchedule.from_dict(f) for f in self.faults]
        if not self.faults:
            self.faults = [FaultSchedule() for _ in range(self.n_robots)]
        self.validate()

    def validate(self) -> None:
        if not 2 <= self.n_robots <= 20:
            raise ConfigError(f"n_robots must lie in [2, 20], got {self.n_robots}")
        if self.algorithm not in ("GPF", "LPF"):
            raise ConfigError(f"algorithm must be GPF or LPF, got {self.algorithm}")
        try:
            bh.Arena.build(self.arena)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad arena: {e}") from e
        if self.duration <= 0 or abs(self.duration * TICKS_PER_SECOND - round(self.duration * TICKS_PER_SECOND)) > 1e-9:
            raise ConfigError("duration must be a positive multiple of the 1/6 s tick")
        if not (self.p_max > 0):
            raise ConfigError("p_max must be positive (use inf for unlimited)")
        if len(self.faults) != self.n_robots:
            raise ConfigError(f"{len(self.faults)} fault schedules for {self.n_robots} robots")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")

    @property
    def ticks(self) -> int:
        return int(round(self.duration * TICKS_PER_SECOND))

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "n_robots": self.n_robots,
            "algorithm": self.algorithm,
            "arena": self.arena if not isinstance(self.arena, bh.Arena) else self.arena.kind.value,
            "duration": self.duration,
            "p_max": "inf" if math.isinf(self.p_max) else self.p_max,
            "faults": [f.to_dict() for f in self.faults],
            "detection": {**asdict(self.detection), "mode": self.detection.mode.value,
                          "classes": list(self.detection.classes)},
            "action": self.action.value,
            "seed": self.seed,
            "replicates": self.replicates,
            "battery_low": self.battery_low,
            "coeffs": self.coeffs,
            "clear_on_repair": self.clear_on_repair,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        if isinstance(d.get("p_max"), str):
            d["p_max"] = float(d["p_max"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **kw) -> "ScenarioConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return ScenarioConfig(**d)

    def dynamics_coeffs(self) -> Dict[HardwareClass, DynamicsCoeffs]:
        out = dict(DEFAULT_COEFFS)
        for k, v in (self.coeffs or {}).items():
            out[HardwareClass(k)] = v if isinstance(v, DynamicsCoeffs) else DynamicsCoeffs.from_dict(v)
        return out


# ---------------------------------------------------------------- log

NUMERIC_FIELDS = ("x", "y", "heading", "d_l", "d_r", "d_s", "power", "v", "omega", "dP", "gamma",
                  "v_n", "omega_n", "dP_n", "gamma_n", "range")
FLAG_FIELDS = ("moving", "carrying", "detected_motor", "detected_sensor")
LOG_COLUMNS = ("tick", "time", "robot") + NUMERIC_FIELDS + ("mode", "status") + FLAG_FIELDS + ("diagnosis",)
MODES = [m.value for m in bh.Mode]
STATUSES = [s.value for s in Status]
DIAGNOSES = ["", "Undiagnosed"] + [c.value for c in Category]


@dataclass
class ExperimentLog:
    """Per-tick, per-robot telemetry plus run-level events.

    Arrays are indexed ``[tick - 1, robot]``.
    """

    n_robots: int
    ticks: int
    data: Dict[str, np.ndarray]
    events: List[dict] = field(default_factory=list)
    detections: List[Detection] = field(default_factory=list)
    cycles: List[CycleResult] = field(default_factory=list)
    run: Optional[int] = None
    config: Optional[dict] = None

    @classmethod
    def empty(cls, n_robots: int, ticks: int, run=None, config=None) -> "ExperimentLog":
        data = {f: np.zeros((ticks, n_robots)) for f in NUMERIC_FIELDS}
        for f in FLAG_FIELDS:
            data[f] = np.zeros((ticks, n_robots), bool)
        for f in ("mode", "status", "diagnosis"):
            data[f] = np.zeros((ticks, n_robots), np.int8)
        return cls(n_robots, ticks, data, run=run, config=config)

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.ticks + 1) / TICKS_PER_SECOND

    def channels(self, hw: HardwareClass) -> np.ndarray:
        """Normalized samples, shape ``(ticks, N, dim)``."""
        names = ("v_n", "omega_n", "dP_n") if HardwareClass(hw) is HardwareClass.MOTOR else ("gamma_n",)
        return np.stack([self.data[n] for n in names], axis=-1)

    def detected(self, hw: Optional[HardwareClass] = None) -> np.ndarray:
        if hw is None:
            return self.data["detected_motor"] | self.data["detected_sensor"]
        return self.data["detected_motor" if HardwareClass(hw) is HardwareClass.MOTOR else "detected_sensor"]

    def events_of(self, kind: str) -> List[dict]:
        return [e for e in self.events if e["kind"] == kind]

    @property
    def resources(self) -> int:
        """Deposits, read off the carrying column (a drop only happens in the base)."""
        c = self.data["carrying"]
        return int((c[:-1] & ~c[1:]).sum())

    def lost_robots(self) -> List[int]:
        lost = self.data["status"] == STATUSES.index(Status.LOST.value)
        return [int(r) for r in np.flatnonzero(lost.any(axis=0))]

    def power_consumed(self) -> float:
        return float(self.data["dP"].sum() / TICKS_PER_SECOND)

    # CSV
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        d = self.data
        for t in range(self.ticks):
            tick = t + 1
            time = repr(tick / TICKS_PER_SECOND)
            for r in range(self.n_robots):
                row = [tick, time, r]
                row += [repr(float(d[f][t, r])) for f in NUMERIC_FIELDS]
                row += [MODES[d["mode"][t, r]], STATUSES[d["status"][t, r]]]
                row += [int(d[f][t, r]) for f in FLAG_FIELDS]
                row.append(DIAGNOSES[d["diagnosis"][t, r]])
                w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text_or_path) -> "ExperimentLog":
        text = text_or_path
        if not isinstance(text, str) or "\n" not in text:
            text = Path(text_or_path).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header = tuple(rows[0])
        if header != LOG_COLUMNS:
            raise ValueError("unexpected log header")
        body = rows[1:]
        n = 1 + max(int(r[2]) for r in body)
        ticks = len(body) // n
        log = cls.empty(n, ticks)
        col = {c: i for i, c in enumerate(header)}
        for row in body:
            t, r = int(row[0]) - 1, int(row[2])
            for f in NUMERIC_FIELDS:
                log.data[f][t, r] = float(row[col[f]])
            log.data["mode"][t, r] = MODES.index(row[col["mode"]])
            log.data["status"][t, r] = STATUSES.index(row[col["status"]])
            for f in FLAG_FIELDS:
                log.data[f][t, r] = row[col[f]] == "1"
            log.data["diagnosis"][t, r] = DIAGNOSES.index(row[col["diagnosis"]])
        return log

    def summary(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "run": self.run,
            "n_robots": self.n_robots,
            "ticks": self.ticks,
            "duration": self.ticks / TICKS_PER_SECOND,
            "resources": self.resources,
            "lost": self.lost_robots(),
            "n_lost": len(self.lost_robots()),
            "power_consumed": self.power_consumed(),
            "detections": len(self.detections),
            "events": {k: len(self.events_of(k)) for k in sorted({e["kind"] for e in self.events})},
            "config": self.config,
        }


# ---------------------------------------------------------------- engine helpers


def oracle_detector(d: Sequence[float], d0: float = D0) -> bool:
    """True iff any coefficient is strictly below ``d0``."""
    return min(d) < d0


def _oracle_classes(robot: RobotState, d0: float) -> List[HardwareClass]:
    out = []
    if min(robot.d_l, robot.d_r) < d0:
        out.append(HardwareClass.MOTOR)
    if robot.d_s < d0:
        out.append(HardwareClass.SENSOR)
    return out


def apply_detection_action(robot: RobotState, classes: Sequence[HardwareClass], action: Action) -> bool:
    """Start recovery for the detected classes. Returns False for a Lost robot."""
    if robot.lost:
        return False
    action = Action(action)
    for hw in classes:
        if action is Action.INSTANT_RESET:
            robot.restore(hw)
        else:
            robot.faulty[HardwareClass(hw)] = True
    return True


def _load_y(detection: DetectionConfig) -> Dict[HardwareClass, LabeledRepertoire]:
    out = {}
    if detection.y_motor:
        out[HardwareClass.MOTOR] = LabeledRepertoire.load(detection.y_motor, HardwareClass.MOTOR)
    if detection.y_sensor:
        out[HardwareClass.SENSOR] = LabeledRepertoire.load(detection.y_sensor, HardwareClass.SENSOR)
    return out


def initial_positions(n: int, arena: bh.Arena) -> np.ndarray:
    """Evenly spaced along the horizontal line through (5, 2)."""
    xs = (np.arange(n) + 1) * arena.width / (n + 1)
    ys = np.full(n, arena.base_top)
    for i, x in enumerate(xs):
        # corridor walls start at the base edge; robots that would overlap one start just below it
        if not arena.disc_free(x, ys[i], CONSTANTS.radius):
            ys[i] = arena.base_top - CONSTANTS.radius - 0.01
    return np.column_stack([xs, ys])


def _init_robot(i: int, sched: FaultSchedule, pos, p_max: float, rng: np.random.Generator) -> RobotState:
    u = rng.random(6)  # fixed draw count
    if sched.d_range is None:
        d = [1.0, 1.0, 1.0]
    else:
        lo, hi = sched.d_range
        d = [lo + (hi - lo) * u[k] for k in range(3)]
        if lo < hi:
            # open interval: keep strictly above a faulty-threshold lower bound
            d = [min(max(v, lo + 1e-9), hi) for v in d]
    p = [0.0, 0.0, 0.0]
    if sched.kind is FaultKind.GRADUAL:
        plo, phi = sched.p_range
        for k, c in enumerate("lrs"):
            if c in sched.coeffs:
                p[k] = plo + (phi - plo) * u[3 + k]
    state = RobotState(i, float(pos[0]), float(pos[1]), math.pi / 2, d[0], d[1], d[2],
                       power=p_max, p_max=p_max, init_d=tuple(d), p_degrade=tuple(p))
    return state


def _schedule_tick(robot: RobotState, sched: FaultSchedule, tick: int, rng, dt: float) -> None:
    u = rng.random(3)
    if sched.kind is FaultKind.GRADUAL:
        robot.d_l = degrade_tick(robot.d_l, robot.p_degrade[0], None, dt, u[0])
        robot.d_r = degrade_tick(robot.d_r, robot.p_degrade[1], None, dt, u[1])
        robot.d_s = degrade_tick(robot.d_s, robot.p_degrade[2], None, dt, u[2])
    elif sched.kind is FaultKind.SPONTANEOUS:
        if tick == max(1, int(round(sched.time * TICKS_PER_SECOND))):
            inject_fault(robot, sched.fault, rng)
    elif sched.kind is FaultKind.STEP_CHANGE:
        if tick == max(1, int(round(sched.time * TICKS_PER_SECOND))):
            init = robot.init_d
            step_change(robot, sched.factor)
            # only the selected coefficients change
            if "l" not in sched.coeffs:
                robot.d_l = init[0]
            if "r" not in sched.coeffs:
                robot.d_r = init[1]
            if "s" not in sched.coeffs:
                robot.d_s = init[2]


def _resolve_collision(i: int, x: float, y: float, positions: np.ndarray, arena: bh.Arena,
                       blockers: np.ndarray, radius: float) -> bool:
    if not arena.disc_free(x, y, radius):
        return False
    dx = positions[:, 0] - x
    dy = positions[:, 1] - y
    dist2 = dx * dx + dy * dy
    dist2[i] = np.inf
    dist2[~blockers] = np.inf
    return bool(dist2.min() >= (2 * radius) ** 2)


def _motor_sample(v_l: float, v_r: float, dp: float) -> tuple:
    v = 0.5 * (v_l + v_r)
    omega = (v_r - v_l) / CONSTANTS.axle
    return v, omega, (normalize_channel(v, "v"), normalize_channel(omega, "omega"), normalize_channel(dp, "dP"))


def _drive_paratopes(engine: AAPDEngine, tick: int, chans: Dict[HardwareClass, np.ndarray], alive: np.ndarray,
                     t: float) -> None:
    """Extract one paratope per robot and class from the last 30 samples."""
    for hw in engine.classes:
        seg = chans[hw]  # (30, N, dim)
        for r in range(engine.n):
            if alive[r]:
                engine.add_paratope(r, Paratope(seg[:, r, :].T, hw), t)


def run_experiment(config: ScenarioConfig, run: Optional[int] = None, Y: Optional[Dict] = None,
                   coeffs: Optional[Dict] = None) -> ExperimentLog:
    """Simulate one replicate. ``config.seed`` fully determines the result.

    ``Y`` and ``coeffs`` override the repertoires and dynamics
    coefficients named by the config.
    """
    config.validate()
    c = CONSTANTS
    dt = c.dt
    arena = bh.Arena.build(config.arena)
    n = config.n_robots
    T = config.ticks
    seed = config.seed
    rngs = {p: [stream(seed, i, p) for i in range(n)] for p in _PURPOSES}
    pos0 = initial_positions(n, arena)
    robots = [_init_robot(i, config.faults[i], pos0[i], config.p_max, rngs["init"][i]) for i in range(n)]
    ctrls = [bh.ControllerState() for _ in range(n)]
    log = ExperimentLog.empty(n, T, run=run, config=config.to_dict())
    det_cfg = config.detection
    mode = det_cfg.mode
    use_engine = mode in (DetectionKind.AAPD, DetectionKind.OFFLINE)
    engine = None
    if use_engine:
        ys = dict(_load_y(det_cfg))
        if Y:
            ys.update(Y)
        engine = AAPDEngine(n, coeffs or config.dynamics_coeffs(), ys, classes=det_cfg.classes)
    ranges = np.array([sensing_range(r.d_s, c=c) for r in robots])
    positions = np.array([[r.x, r.y] for r in robots])
    detected = {hw: np.zeros(n, bool) for hw in HardwareClass}
    diag_code = np.zeros(n, np.int8)
    chans = {HardwareClass.MOTOR: np.zeros((T, n, 3)), HardwareClass.SENSOR: np.zeros((T, n, 1))}
    moving = np.zeros(n, bool)
    d0 = det_cfg.d0
    p_max_finite = math.isfinite(config.p_max)

    for tick in range(1, T + 1):
        ti = tick - 1
        t = tick / TICKS_PER_SECOND
        # (1) degradation and fault schedule
        for i, rb in enumerate(robots):
            _schedule_tick(rb, config.faults[i], tick, rngs["degrade"][i], dt)

        # (2) controllers
        networked = None
        if config.algorithm == "LPF":
            alive_mask = np.array([r.power > 0 for r in robots])
            networked, _ = bh.network_connected(positions, ranges, arena, active=alive_mask)
        world = bh.World(arena, positions, ranges, [r.status for r in robots], networked)
        cmds: List[bh.Command] = []
        for i, rb in enumerate(robots):
            if rb.lost or rb.power <= 0:
                cmds.append(bh.Command(0.0, 0.0, bh.Mode.STOPPED))
                continue
            low = p_max_finite and rb.power < config.battery_low * config.p_max
            if config.algorithm == "GPF":
                cmd = bh.gpf_step(rb, ctrls[i], world, low, rngs["control"][i])
            else:
                cmd = bh.lpf_step(rb, ctrls[i], world, dt, rngs["control"][i])
            cmds.append(cmd)

        # events fire before motion: collect, deposit, recharge, repair
        for i, (rb, cmd) in enumerate(zip(robots, cmds)):
            for ev in cmd.events:
                if ev == "collect" and not rb.carrying:
                    rb.carrying = True
                    log.events.append({"kind": "collect", "tick": tick, "robot": i})
                elif ev == "deposit" and rb.carrying and arena.in_base(rb.x, rb.y):
                    rb.carrying = False
                    log.events.append({"kind": "deposit", "tick": tick, "robot": i})
                elif ev == "recharge":
                    log.events.append({"kind": "recharge", "tick": tick, "robot": i,
                                       "amount": rb.p_max - rb.power if p_max_finite else 0.0})
                    rb.power = rb.p_max
                elif ev == "repair":
                    classes = [hw for hw, f in rb.faulty.items() if f]
                    for hw in classes:
                        rb.restore(hw)
                        rb.faulty[hw] = False
                        if engine is not None and config.clear_on_repair:
                            engine.reset_robot(i, hw)
                    log.events.append({"kind": "repair", "tick": tick, "robot": i,
                                       "classes": [h.value for h in classes]})
            rb.status = (Status.LOST if rb.lost else
                         Status.WAITING if cmd.mode is bh.Mode.WAIT else
                         Status.RETURNING if cmd.mode is bh.Mode.RETURN else Status.ACTIVE)

        # (3) physics and power
        blockers = np.ones(n, bool)
        for i, (rb, cmd) in enumerate(zip(robots, cmds)):
            z = rngs["physics"][i].standard_normal(5)
            dead = rb.power <= 0
            if dead:
                v_l = v_r = 0.0
                dp = 0.0
            else:
                cap_l = max(velocity_cap(rb.d_l, c) * (1.0 + c.noise * z[0]), 0.0)
                cap_r = max(velocity_cap(rb.d_r, c) * (1.0 + c.noise * z[1]), 0.0)
                v_l = min(max(cmd.left, -1.0), 1.0) * cap_l
                v_r = min(max(cmd.right, -1.0), 1.0) * cap_r
                dp = (wheel_power(rb.d_l, cmd.left != 0.0, z=z[2], c=c)
                      + wheel_power(rb.d_r, cmd.right != 0.0, z=z[3], c=c)
                      + background_power(z=z[4], c=c))
                if p_max_finite:
                    if dp * dt >= rb.power:
                        dp = rb.power / dt  # the battery empties part-way through this tick
                        rb.power = 0.0
                    else:
                        rb.power -= dp * dt
            moving[i] = cmd.moving and not dead
            if v_l != 0.0 or v_r != 0.0:
                nx, ny, nh = step_pose(rb.x, rb.y, rb.heading, v_l, v_r, dt, c.axle)
                if _resolve_collision(i, nx, ny, positions, arena, blockers, c.radius):
                    rb.x, rb.y = nx, ny
                    ctrls[i].blocked = False
                else:
                    ctrls[i].blocked = cmd.mode is not bh.Mode.AVOID and abs(v_l + v_r) > 1e-9
                rb.heading = nh
                positions[i] = (rb.x, rb.y)
            v, omega, motor_n = _motor_sample(v_l, v_r, dp)
            dd = log.data
            dd["v"][ti, i], dd["omega"][ti, i], dd["dP"][ti, i] = v, omega, dp
            chans[HardwareClass.MOTOR][ti, i] = motor_n
            if not rb.lost:
                if rb.power <= 0 and not arena.in_base(rb.x, rb.y):
                    rb.status = Status.LOST
                    log.events.append({"kind": "lost", "tick": tick, "robot": i, "cause": "power"})
                elif (max(velocity_cap(rb.d_l, c), velocity_cap(rb.d_r, c)) < IMMOBILE_SPEED
                      and not arena.in_base(rb.x, rb.y)):
                    rb.status = Status.LOST
                    log.events.append({"kind": "lost", "tick": tick, "robot": i, "cause": "immobile"})

        # (4) sensing ranges, gamma, window samples
        zr = np.array([rngs["range"][i].standard_normal() for i in range(n)])
        ranges = np.array([sensing_range(rb.d_s, z=zr[i], c=c) for i, rb in enumerate(robots)])
        alive = np.array([rb.power > 0 for rb in robots])
        gamma = compute_gamma(positions, ranges, c.r_max, active=alive)
        for i in range(n):
            chans[HardwareClass.SENSOR][ti, i, 0] = normalize_channel(gamma[i], "gamma")

        # (5) paratopes, (6) AAPD cycles
        cycle_result = None
        if engine is not None:
            if tick % PARATOPE_TICKS == 0:
                seg = {hw: chans[hw][tick - PARATOPE_TICKS:tick] for hw in engine.classes}
                _drive_paratopes(engine, tick, seg, alive, t)
            if tick % CYCLE_TICKS == 0 and tick >= CYCLE_TICKS:
                wins = {hw: np.transpose(chans[hw][tick - CYCLE_TICKS:tick], (1, 2, 0)) for hw in engine.classes}
                computing = None
                if config.algorithm == "LPF":
                    mv = moving & alive
                    enough = mv & ((mv.sum() - mv) >= LPF_MIN_MOVING - 1)
                    computing = {HardwareClass.MOTOR: enough, HardwareClass.SENSOR: alive}
                cycle_result = engine.cycle(t, wins, computing, alive)
                for det in cycle_result.detections:
                    rb = robots[det.robot]
                    _annotate(det, rb.d_l, rb.d_r, rb.d_s, run, tick)
                log.detections.extend(cycle_result.detections)
                log.cycles.append(cycle_result)
                for hw in HardwareClass:
                    detected[hw] = cycle_result.detected.get(hw, np.zeros(n, bool))
                diag_code[:] = 0
                for det in cycle_result.detections:
                    diag_code[det.robot] = DIAGNOSES.index(det.diagnosis.label if det.diagnosis else "Undiagnosed")

        # (7) detection actions
        if mode is DetectionKind.ORACLE:
            for i, rb in enumerate(robots):
                if rb.lost:
                    continue
                classes = [hw for hw in _oracle_classes(rb, d0) if not rb.faulty[hw]]
                if classes:
                    log.events.append({"kind": "detect", "tick": tick, "robot": i, "classes": [h.value for h in classes],
                                       "d": list(rb.d)})
                    apply_detection_action(rb, classes, config.action)
                for hw in HardwareClass:
                    detected[hw][i] = hw in classes or rb.faulty[hw]
        elif mode is DetectionKind.AAPD and cycle_result is not None:
            for det in cycle_result.detections:
                rb = robots[det.robot]
                hw = det.hardware_class
                if rb.faulty[hw]:
                    continue
                log.events.append({"kind": "detect", "tick": tick, "robot": det.robot, "classes": [hw.value],
                                   "d": list(rb.d)})
                apply_detection_action(rb, [hw], config.action)
                if config.action is Action.INSTANT_RESET and config.clear_on_repair:
                    engine.reset_robot(det.robot, hw)

        # (8) logging
        dd = log.data
        for i, rb in enumerate(robots):
            dd["x"][ti, i], dd["y"][ti, i], dd["heading"][ti, i] = rb.x, rb.y, rb.heading
            dd["d_l"][ti, i], dd["d_r"][ti, i], dd["d_s"][ti, i] = rb.d_l, rb.d_r, rb.d_s
            dd["power"][ti, i] = rb.power
            dd["gamma"][ti, i] = gamma[i]
            dd["range"][ti, i] = ranges[i]
            dd["mode"][ti, i] = MODES.index(cmds[i].mode.value)
            dd["status"][ti, i] = STATUSES.index(rb.status.value)
            dd["carrying"][ti, i] = rb.carrying
        dd["moving"][ti] = moving
        dd["detected_motor"][ti] = detected[HardwareClass.MOTOR]
        dd["detected_sensor"][ti] = detected[HardwareClass.SENSOR]
        dd["diagnosis"][ti] = diag_code if mode is not DetectionKind.ORACLE else 0

    cm = chans[HardwareClass.MOTOR]
    log.data["v_n"], log.data["omega_n"], log.data["dP_n"] = cm[..., 0].copy(), cm[..., 1].copy(), cm[..., 2].copy()
    log.data["gamma_n"] = chans[HardwareClass.SENSOR][..., 0].copy()
    return log


def _annotate(det: Detection, d_l: float, d_r: float, d_s: float, run, tick: int) -> None:
    det.run = run
    det.tick = tick
    if det.hardware_class is HardwareClass.MOTOR:
        det.delta = min(d_l, d_r)
        det.truth = label_from_truth(HardwareClass.MOTOR, d_l, d_r)
    else:
        det.delta = d_s
        det.truth = Category.SENSOR_FAULT if d_s <= D0 else Category.FALSE_POSITIVE


def replay(log: ExperimentLog, Y: Optional[Dict] = None, coeffs: Optional[Dict] = None,
           classes=tuple(HardwareClass), algorithm: Optional[str] = None) -> ExperimentLog:
    """Re-run the AAPD dynamics over a recorded log.

    Returns a copy of ``log`` with freshly computed detection flags,
    diagnoses and detection records. The robots' physical trajectory is
    unchanged, so this is only meaningful for logs whose detections did not
    feed back into behaviour.
    """
    n, T = log.n_robots, log.ticks
    if algorithm is None:
        algorithm = (log.config or {}).get("algorithm", "GPF")
    engine = AAPDEngine(n, coeffs, Y, classes=classes)
    chans = {hw: log.channels(hw) for hw in HardwareClass}
    out = ExperimentLog(n, T, {k: v.copy() for k, v in log.data.items()}, list(log.events), [], [], log.run,
                        log.config)
    out.data["detected_motor"][:] = False
    out.data["detected_sensor"][:] = False
    out.data["diagnosis"][:] = 0
    alive_all = log.data["power"] > 0
    for tick in range(PARATOPE_TICKS, T + 1, PARATOPE_TICKS):
        ti = tick - 1
        alive = alive_all[ti]
        t = tick / TICKS_PER_SECOND
        seg = {hw: chans[hw][tick - PARATOPE_TICKS:tick] for hw in engine.classes}
        _drive_paratopes(engine, tick, seg, alive, t)
        if tick % CYCLE_TICKS == 0:
            wins = {hw: np.transpose(chans[hw][tick - CYCLE_TICKS:tick], (1, 2, 0)) for hw in engine.classes}
            computing = None
            if algorithm == "LPF":
                mv = log.data["moving"][ti] & alive
                enough = mv & ((mv.sum() - mv) >= LPF_MIN_MOVING - 1)
                computing = {HardwareClass.MOTOR: enough, HardwareClass.SENSOR: alive}
            res = engine.cycle(t, wins, computing, alive)
            end = min(T, tick + CYCLE_TICKS)
            diag = np.zeros(n, np.int8)
            for det in res.detections:
                _annotate(det, *(float(log.data[k][ti, det.robot]) for k in ("d_l", "d_r", "d_s")), log.run, tick)
                diag[det.robot] = DIAGNOSES.index(det.diagnosis.label if det.diagnosis else "Undiagnosed")
            # flags latch from this cycle until the next boundary
            out.data["detected_motor"][ti:end] = res.detected.get(HardwareClass.MOTOR, np.zeros(n, bool))
            out.data["detected_sensor"][ti:end] = res.detected.get(HardwareClass.SENSOR, np.zeros(n, bool))
            out.data["diagnosis"][ti:end] = diag
            out.detections.extend(res.detections)
            out.cycles.append(res)
    return out
