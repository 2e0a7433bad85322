"""Arenas, foraging controllers and ad-hoc network connectivity."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .robot import CONSTANTS, wrap_angle

AVOID_DISTANCE = 0.5
GPF_COLLECT = 0.75
LPF_COLLECT = 0.5
LPF_HOP = 3.0
FORWARD_CONE = math.pi / 3.0
EXIT_CONE = math.pi / 2.0  # an avoidance turn ends only once this cone is clear
ROTATE_COMMAND = 0.5
STEER_GAIN = 2.0
EXPLORE_PERIOD = 5.0  # s between random-explore heading draws
ESCAPE_TIME = 1.5  # s of straight driving after an avoidance turn


class ArenaKind(str, Enum):
    EMPTY = "empty"
    CONSTRAINED = "constrained"


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def distance(self, x: float, y: float) -> float:
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dy = max(self.y0 - y, 0.0, y - self.y1)
        return math.hypot(dx, dy)

    def closest_point(self, x: float, y: float) -> Tuple[float, float]:
        return min(max(x, self.x0), self.x1), min(max(y, self.y0), self.y1)


@dataclass(frozen=True)
class Arena:
    kind: ArenaKind = ArenaKind.EMPTY
    width: float = 10.0
    height: float = 10.0
    nests: Tuple[Tuple[float, float], ...] = ((2.0, 8.0), (5.0, 8.0), (8.0, 8.0))
    nest_radius: float = 1.0
    base_top: float = 2.0
    walls: Tuple[Rect, ...] = ()

    @classmethod
    def empty(cls) -> "Arena":
        return cls(ArenaKind.EMPTY)

    @classmethod
    def constrained(cls) -> "Arena":
        # three 2 m corridors, 5 m long, between base (y <= 2) and nests
        blocks = tuple(Rect(x0, 2.0, x0 + 1.0, 7.0) for x0 in (0.0, 3.0, 6.0, 9.0))
        return cls(ArenaKind.CONSTRAINED, walls=blocks)

    @classmethod
    def build(cls, desc) -> "Arena":
        if isinstance(desc, Arena):
            return desc
        if isinstance(desc, dict):
            walls = tuple(Rect(*w) for w in desc.get("walls", ()))
            return cls(ArenaKind(desc.get("kind", "empty")), walls=walls,
                       nests=tuple(tuple(n) for n in desc.get("nests", cls.nests)))
        kind = ArenaKind(str(desc).lower())
        return cls.empty() if kind is ArenaKind.EMPTY else cls.constrained()

    def in_base(self, x: float, y: float) -> bool:
        return 0.0 <= y <= self.base_top

    def nearest_nest(self, x: float, y: float) -> Tuple[int, float]:
        d = [math.hypot(x - nx, y - ny) for nx, ny in self.nests]
        i = int(np.argmin(d))
        return i, d[i]

    def wall_clearance(self, x: float, y: float) -> float:
        """Distance from a point to the nearest boundary or wall."""
        c = min(x, self.width - x, y, self.height - y)
        for w in self.walls:
            c = min(c, w.distance(x, y))
        return c

    def obstacle_points(self, x: float, y: float) -> List[Tuple[float, float, float]]:
        """(px, py, distance) of closest points on each boundary and wall."""
        pts = [(0.0, y, x), (self.width, y, self.width - x), (x, 0.0, y), (x, self.height, self.height - y)]
        for w in self.walls:
            px, py = w.closest_point(x, y)
            pts.append((px, py, math.hypot(px - x, py - y)))
        return pts

    def corridor_centres(self) -> List[float]:
        """x centres of the gaps between wall blocks."""
        if not self.walls:
            return []
        spans = sorted((w.x0, w.x1) for w in self.walls)
        gaps = [(a[1], b[0]) for a, b in zip(spans, spans[1:]) if b[0] > a[1]]
        return [0.5 * (lo + hi) for lo, hi in gaps]

    def disc_free(self, x: float, y: float, radius: float) -> bool:
        if x < radius or y < radius or x > self.width - radius or y > self.height - radius:
            return False
        return all(w.distance(x, y) >= radius for w in self.walls)


class Mode(str, Enum):
    AVOID = "avoid"
    RETURN = "return"
    DEPOSIT = "deposit"
    COLLECT = "collect"
    APPROACH = "approach"
    FORWARD = "forward"
    EXPLORE = "explore"
    WAIT = "wait"
    STOPPED = "stopped"


@dataclass
class ControllerState:
    mode: Mode = Mode.FORWARD
    avoid_dir: int = 0  # +1 rotate left, -1 rotate right, 0 not avoiding
    explore_heading: Optional[float] = None
    explore_timer: float = 0.0
    blocked: bool = False
    escape: float = 0.0  # remaining straight-drive time after avoiding
    escape_heading: Optional[float] = None


@dataclass
class Command:
    left: float
    right: float
    mode: Mode
    events: Tuple[str, ...] = ()

    @property
    def moving(self) -> bool:
        return self.left != 0.0 or self.right != 0.0


def front_clearance(x: float, y: float, heading: float, arena: Arena, others: Sequence[Tuple[float, float]],
                    radius: float = CONSTANTS.radius, cone: float = FORWARD_CONE) -> Tuple[float, float]:
    """Clearance to the nearest object inside the forward cone and its bearing.

    Returns ``(inf, 0.0)`` when nothing lies in the cone.
    """
    best, bearing = math.inf, 0.0
    for px, py, dist in arena.obstacle_points(x, y):
        if dist - radius >= best:
            continue
        b = wrap_angle(math.atan2(py - y, px - x) - heading) if dist > 1e-12 else 0.0
        if abs(b) <= cone:
            best, bearing = dist - radius, b
    for ox, oy in others:
        dist = math.hypot(ox - x, oy - y)
        if dist < 1e-12 or dist - 2 * radius >= best:
            continue
        b = wrap_angle(math.atan2(oy - y, ox - x) - heading)
        if abs(b) <= cone:
            best, bearing = dist - 2 * radius, b
    return best, bearing


def avoid_step(ctrl: ControllerState, bearing: float, rng=None) -> Command:
    """Rotate in place away from the obstacle bearing."""
    if ctrl.avoid_dir == 0:
        if abs(bearing) < 1e-6:
            ctrl.avoid_dir = 1 if (rng is None or rng.random() < 0.5) else -1
        else:
            ctrl.avoid_dir = -1 if bearing > 0 else 1
    ctrl.mode = Mode.AVOID
    c = ROTATE_COMMAND * ctrl.avoid_dir
    return Command(-c, c, Mode.AVOID)


def _avoidance(ctrl: ControllerState, heading: float, clearance: float, bearing: float, wide_clearance: float,
               rng, dt: float) -> Optional[Command]:
    """Turn away while something is close, then hold the new heading briefly."""
    if clearance <= AVOID_DISTANCE or ctrl.blocked:
        if ctrl.blocked and clearance > AVOID_DISTANCE:
            bearing = 0.0
        ctrl.escape = ESCAPE_TIME
        ctrl.escape_heading = None
        return avoid_step(ctrl, bearing, rng)
    if ctrl.avoid_dir != 0 and wide_clearance <= AVOID_DISTANCE:
        return avoid_step(ctrl, 0.0, rng)
    ctrl.avoid_dir = 0
    if ctrl.escape > 0.0:
        # heading feedback, so a robot with one weak wheel does not curl back in
        if ctrl.escape_heading is None:
            ctrl.escape_heading = heading
        ctrl.escape -= dt
        return steer(heading, ctrl.escape_heading, Mode.AVOID)
    ctrl.escape_heading = None
    return None


def steer(heading: float, target: float, mode: Mode) -> Command:
    """Proportional heading control; large errors turn on the spot."""
    e = wrap_angle(target - heading)
    if abs(e) > math.pi / 4:
        c = ROTATE_COMMAND if e > 0 else -ROTATE_COMMAND
        return Command(-c, c, mode)
    left = min(max(1.0 - STEER_GAIN * e, 0.0), 1.0)
    right = min(max(1.0 + STEER_GAIN * e, 0.0), 1.0)
    return Command(left, right, mode)


def return_to_base_step(x: float, y: float, heading: float, arena: Arena) -> Command:
    """Steer toward the base; corridors are entered from above their centre."""
    if arena.in_base(x, y):
        return Command(0.0, 0.0, Mode.DEPOSIT, ("arrive",))
    tx, ty = x, arena.base_top - 0.5
    centres = arena.corridor_centres()
    if centres:
        top = max(w.y1 for w in arena.walls)
        cx = min(centres, key=lambda c: abs(c - x))
        if y > top and abs(x - cx) > 0.3:
            tx, ty = cx, top + 0.5
        else:
            tx = cx
    return steer(heading, math.atan2(ty - y, tx - x), Mode.RETURN)


@dataclass
class World:
    """Per-tick snapshot handed to controllers."""

    arena: Arena
    positions: np.ndarray  # (N, 2)
    sensing_ranges: np.ndarray  # (N,)
    statuses: list
    networked: Optional[np.ndarray] = None
    hop_distance: Optional[np.ndarray] = None


def _others(world: World, i: int) -> List[Tuple[float, float]]:
    pos = world.positions
    return [(float(pos[j, 0]), float(pos[j, 1])) for j in range(pos.shape[0]) if j != i]


def _should_return(robot, battery_low: bool) -> bool:
    return robot.carrying or battery_low or any(robot.faulty.values())


def gpf_step(robot, ctrl: ControllerState, world: World, battery_low: bool, rng=None,
             dt: float = CONSTANTS.dt) -> Command:
    """Global-positioning foraging: one branch per tick in priority order."""
    i = robot.id
    x, y, h = robot.x, robot.y, robot.heading
    others = _others(world, i)
    clearance, bearing = front_clearance(x, y, h, world.arena, others)
    wide = front_clearance(x, y, h, world.arena, others, cone=EXIT_CONE)[0] if ctrl.avoid_dir else math.inf
    cmd = _avoidance(ctrl, h, clearance, bearing, wide, rng, dt)
    if cmd is not None:
        return cmd
    if _should_return(robot, battery_low):
        cmd = return_to_base_step(x, y, h, world.arena)
        if "arrive" in cmd.events:
            ev = []
            if robot.carrying:
                ev.append("deposit")
            if battery_low:
                ev.append("recharge")
            if any(robot.faulty.values()):
                ev.append("repair")
            cmd = Command(0.0, 0.0, Mode.DEPOSIT, tuple(ev))
        ctrl.mode = cmd.mode
        return cmd
    _, nest_dist = world.arena.nearest_nest(x, y)
    if nest_dist <= GPF_COLLECT:
        ctrl.mode = Mode.COLLECT
        return Command(0.0, 0.0, Mode.COLLECT, ("collect",))
    r = float(world.sensing_ranges[i])
    if nest_dist - world.arena.nest_radius <= r:
        j, _ = world.arena.nearest_nest(x, y)
        nx, ny = world.arena.nests[j]
        ctrl.mode = Mode.APPROACH
        return steer(h, math.atan2(ny - y, nx - x), Mode.APPROACH)
    ctrl.mode = Mode.FORWARD
    return Command(1.0, 1.0, Mode.FORWARD)


def lpf_step(robot, ctrl: ControllerState, world: World, dt: float, rng=None) -> Command:
    """Local-positioning foraging; the robot waits unless it can localise."""
    i = robot.id
    connected = world.networked is not None and bool(world.networked[i])
    if not connected:
        ctrl.mode = Mode.WAIT
        return Command(0.0, 0.0, Mode.WAIT)
    x, y, h = robot.x, robot.y, robot.heading
    others = _others(world, i)
    clearance, bearing = front_clearance(x, y, h, world.arena, others)
    wide = front_clearance(x, y, h, world.arena, others, cone=EXIT_CONE)[0] if ctrl.avoid_dir else math.inf
    cmd = _avoidance(ctrl, h, clearance, bearing, wide, rng, dt)
    if cmd is not None:
        ctrl.explore_heading = None
        return cmd
    if robot.carrying or any(robot.faulty.values()):
        cmd = return_to_base_step(x, y, h, world.arena)
        if "arrive" in cmd.events:
            ev = []
            if robot.carrying:
                ev.append("deposit")
            if any(robot.faulty.values()):
                ev.append("repair")
            cmd = Command(0.0, 0.0, Mode.DEPOSIT, tuple(ev))
        ctrl.mode = cmd.mode
        return cmd
    j, nest_dist = world.arena.nearest_nest(x, y)
    if nest_dist <= LPF_COLLECT:
        ctrl.mode = Mode.COLLECT
        return Command(0.0, 0.0, Mode.COLLECT, ("collect",))
    r = float(world.sensing_ranges[i])
    if nest_dist - world.arena.nest_radius <= r:
        nx, ny = world.arena.nests[j]
        ctrl.mode = Mode.APPROACH
        return steer(h, math.atan2(ny - y, nx - x), Mode.APPROACH)
    ctrl.explore_timer -= dt
    if ctrl.explore_heading is None or ctrl.explore_timer <= 0.0:
        ctrl.explore_heading = float(rng.uniform(-math.pi, math.pi)) if rng is not None else h
        ctrl.explore_timer = EXPLORE_PERIOD
    ctrl.mode = Mode.EXPLORE
    return steer(h, ctrl.explore_heading, Mode.EXPLORE)


def network_connected(positions: np.ndarray, ranges: np.ndarray, arena: Arena, hop: float = LPF_HOP,
                      base_range: float = CONSTANTS.r_max, active: Optional[np.ndarray] = None):
    """Breadth-first expansion of the localisation network from the base.

    A node joins when it lies within ``min(hop, r_prev)`` of an already
    networked node, where ``r_prev`` is that node's sensing range. The base
    acts as the root with range ``base_range``.

    Returns
    -------
    networked : ndarray of bool, shape (N,)
    hop_distance : ndarray of float, shape (N,)
        Distance to the networked node that admitted each robot (inf when
        disconnected; 0 inside the base).
    """
    pos = np.asarray(positions, float)
    r = np.asarray(ranges, float)
    n = pos.shape[0]
    networked = np.zeros(n, bool)
    hop_d = np.full(n, np.inf)
    act = np.ones(n, bool) if active is None else np.asarray(active, bool)
    queue: deque = deque()
    root_reach = min(hop, base_range)
    for i in range(n):
        if not act[i]:
            continue
        dy = max(pos[i, 1] - arena.base_top, 0.0)
        if dy <= root_reach:
            networked[i] = True
            hop_d[i] = dy
            queue.append(i)
    while queue:
        k = queue.popleft()
        reach = min(hop, r[k])
        for j in range(n):
            if networked[j] or not act[j]:
                continue
            dist = math.hypot(pos[j, 0] - pos[k, 0], pos[j, 1] - pos[k, 1])
            if dist <= reach:
                networked[j] = True
                hop_d[j] = dist
                queue.append(j)
    return networked, hop_d
