"""Differential-drive robot model: kinematics, degradation, power and sensing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .matching import HardwareClass
from .repertoire import BehaviouralWindow, Repertoire


@dataclass(frozen=True)
class PhysicalConstants:
    v_max: float = 0.22  # m/s per wheel
    axle: float = 0.16  # m
    r_max: float = 4.0  # m
    dp_max: float = 1.0 / 300.0  # 1/s
    wheel_dp_fraction: float = 0.4  # of dp_max per wheel at full load
    background_dp_fraction: float = 0.2
    noise: float = 0.05  # sigma as a fraction of the base value
    radius: float = 0.15  # m, body disc
    dt: float = 1.0 / 6.0  # s

    @property
    def wheel_dp_max(self) -> float:
        return self.wheel_dp_fraction * self.dp_max


CONSTANTS = PhysicalConstants()


def _noise(base: float, sigma_frac: float, rng, z) -> float:
    if z is None:
        if rng is None:
            return 0.0
        z = rng.standard_normal()
    return float(z) * sigma_frac * base


def velocity_cap(d: float, c: PhysicalConstants = CONSTANTS) -> float:
    """Noise-free maximum wheel speed at degradation ``d``."""
    return c.v_max / (1.0 + math.exp(-5.0 * (2.0 * d - 1.0)))


def wheel_velocity(d: float, command: float = 1.0, rng=None, z=None, c: PhysicalConstants = CONSTANTS) -> float:
    """Wheel speed for a signed command fraction in [-1, 1].

    ``rng``/``z`` supply the Gaussian deviate; with neither the result is
    noise-free.
    """
    base = velocity_cap(d, c)
    cap = max(base + _noise(base, c.noise, rng, z), 0.0)
    return min(max(float(command), -1.0), 1.0) * cap


def wheel_power_base(d: float, c: PhysicalConstants = CONSTANTS) -> float:
    return c.wheel_dp_max / (1.0 + math.exp(-10.0 * ((1.0 - d) + 0.11)))


def wheel_power(d: float, in_use: bool = True, rng=None, z=None, c: PhysicalConstants = CONSTANTS) -> float:
    """Power draw rate of one motor; zero when the wheel is idle."""
    if not in_use:
        return 0.0
    base = wheel_power_base(d, c)
    return max(base + _noise(base, c.noise, rng, z), 0.0)


def background_power(rng=None, z=None, c: PhysicalConstants = CONSTANTS) -> float:
    base = c.background_dp_fraction * c.dp_max
    return max(base + _noise(base, c.noise, rng, z), 0.0)


def sensing_range(d_s: float, rng=None, z=None, c: PhysicalConstants = CONSTANTS) -> float:
    base = c.r_max * math.sqrt(max(d_s, 0.0))
    return min(max(base + _noise(base, c.noise, rng, z), 0.0), c.r_max)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def step_pose(x: float, y: float, heading: float, v_l: float, v_r: float, dt: float = CONSTANTS.dt,
              axle: float = CONSTANTS.axle) -> tuple[float, float, float]:
    """Unicycle integration. Heading is updated first, then position."""
    v = 0.5 * (v_l + v_r)
    omega = (v_r - v_l) / axle
    heading = wrap_angle(heading + omega * dt)
    return x + v * dt * math.cos(heading), y + v * dt * math.sin(heading), heading


def compute_gamma(positions: np.ndarray, ranges: np.ndarray, r_max: float = CONSTANTS.r_max,
                  active: Optional[np.ndarray] = None) -> np.ndarray:
    """Handshake asymmetry distance for every robot.

    Robot ``i`` senses ``j`` when ``j``'s signal reaches it
    (``dist <= ranges[j]``); ``gamma[i]`` is the closest ``j`` that ``i``
    senses but which cannot sense ``i`` back, or ``r_max`` if none.
    """
    pos = np.asarray(positions, dtype=float)
    r = np.asarray(ranges, dtype=float)
    n = pos.shape[0]
    if n == 0:
        return np.zeros(0)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    i_senses_j = dist <= r[None, :]
    j_senses_i = dist <= r[:, None]
    asym = i_senses_j & ~j_senses_i
    np.fill_diagonal(asym, False)
    if active is not None:
        act = np.asarray(active, bool)
        asym &= act[None, :] & act[:, None]
    cand = np.where(asym, dist, np.inf)
    gamma = cand.min(axis=1)
    return np.minimum(np.where(np.isfinite(gamma), gamma, r_max), r_max)


def degrade_tick(d: float, p: float, rng, dt: float = CONSTANTS.dt, u=None) -> float:
    """One Bernoulli trial with probability ``p * dt`` of losing 0.01."""
    if p <= 0.0:
        return d
    if u is None:
        u = rng.random()
    if u < p * dt:
        return max(round(d - 0.01, 10), 0.0)
    return d


class Status(str, Enum):
    ACTIVE = "Active"
    RETURNING = "ReturningToBase"
    WAITING = "Waiting"
    LOST = "Lost"


class Fault(str, Enum):
    H1 = "H1"
    H2 = "H2"
    H3 = "H3"


@dataclass
class RobotState:
    id: int
    x: float
    y: float
    heading: float
    d_l: float = 1.0
    d_r: float = 1.0
    d_s: float = 1.0
    power: float = 1.0
    p_max: float = 1.0
    carrying: bool = False
    status: Status = Status.ACTIVE
    # initial coefficients, restored on repair
    init_d: tuple = (1.0, 1.0, 1.0)
    # per-coefficient decrement probabilities per second
    p_degrade: tuple = (0.0, 0.0, 0.0)
    faulty: dict = field(default_factory=dict)  # HardwareClass -> bool, pending repair
    windows: dict = field(default_factory=dict)
    repertoires: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.windows:
            self.windows = {hw: BehaviouralWindow(hw) for hw in HardwareClass}
        if not self.repertoires:
            self.repertoires = {hw: Repertoire(hw) for hw in HardwareClass}
        for hw in HardwareClass:
            self.faulty.setdefault(hw, False)

    @property
    def d(self) -> tuple:
        return self.d_l, self.d_r, self.d_s

    @property
    def lost(self) -> bool:
        return self.status is Status.LOST

    def restore(self, hw: Optional[HardwareClass] = None) -> None:
        """Reset degradation coefficients to their initial values."""
        if hw is None or hw is HardwareClass.MOTOR:
            self.d_l, self.d_r = self.init_d[0], self.init_d[1]
        if hw is None or hw is HardwareClass.SENSOR:
            self.d_s = self.init_d[2]


def inject_fault(state: RobotState, fault: Fault, rng=None) -> RobotState:
    """Spontaneous complete failure.

    H2 leaves ``d_r`` alone when it is already in (0.75, 1]; otherwise it is
    redrawn inside that interval.
    """
    fault = Fault(fault)
    if fault is Fault.H1:
        state.d_l = state.d_r = 0.0
    elif fault is Fault.H2:
        state.d_l = 0.0
        if not 0.75 < state.d_r <= 1.0:
            state.d_r = 0.75 + 0.25 * (rng.random() if rng is not None else 1.0)
            state.d_r = min(max(state.d_r, 0.7500001), 1.0)
    else:
        state.d_s = 0.0
    return state


def step_change(state: RobotState, factor: float = 2.0 / 3.0) -> RobotState:
    state.d_l = factor * state.init_d[0]
    state.d_r = factor * state.init_d[1]
    state.d_s = factor * state.init_d[2]
    return state
