"""Behavioural windows, paratope extraction and repertoire membership."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .matching import HardwareClass, MatchParams, Paratope, match_matrix

WINDOW_CAPACITY = 300
SAMPLE_RATE = 6  # Hz
PARATOPE_LENGTH = 30
MEMBERSHIP_PARAMS = MatchParams(s=1.5, g=1, k=10)
MEMBERSHIP_THRESHOLD = 1.2  # u
REPERTOIRE_VERSION = 1

# physical scales used by the channel normalization
V_MAX = 0.22
AXLE = 0.16
R_MAX = 4.0
DP_MAX = 1.0 / 300.0

CHANNELS = {
    HardwareClass.MOTOR: ("v", "omega", "dP"),
    HardwareClass.SENSOR: ("gamma",),
}


class Category(str, Enum):
    BOTH_MOTORS = "BothMotors"
    LEFT_MOTOR = "LeftMotor"
    RIGHT_MOTOR = "RightMotor"
    FALSE_POSITIVE = "FalsePositive"
    SENSOR_FAULT = "SensorFault"
    UNLABELED = "Unlabeled"


MOTOR_CATEGORIES = (Category.BOTH_MOTORS, Category.LEFT_MOTOR, Category.RIGHT_MOTOR, Category.FALSE_POSITIVE)


def normalize_channel(raw: float, channel: str) -> float:
    """Map a physical reading onto [0, 1].

    ``v`` and ``dP`` scale by their maxima, ``gamma`` by the maximum sensing
    range, and ``omega`` is centred on 0.5 with full scale at both wheels
    opposed at ``v_max``.
    """
    if channel == "v":
        x = raw / V_MAX
    elif channel == "omega":
        x = 0.5 + raw * AXLE / (4.0 * V_MAX)
    elif channel == "dP":
        x = raw / DP_MAX
    elif channel == "gamma":
        x = raw / R_MAX
    else:
        raise ValueError(f"unknown channel {channel!r}")
    return min(1.0, max(0.0, float(x)))


class BehaviouralWindow:
    """Rolling record of the most recent ``capacity`` samples per channel."""

    def __init__(self, hardware_class: HardwareClass, capacity: int = WINDOW_CAPACITY):
        self.hardware_class = HardwareClass(hardware_class)
        self.capacity = capacity
        self._buf = np.zeros((self.hardware_class.dim, capacity))
        self._n = 0  # total samples ever pushed

    def __len__(self):
        return min(self._n, self.capacity)

    @property
    def total_pushed(self) -> int:
        return self._n

    @property
    def full(self) -> bool:
        return self._n >= self.capacity

    def push(self, sample: Sequence[float]) -> None:
        s = np.asarray(sample, dtype=float).ravel()
        if s.size != self.hardware_class.dim:
            raise ValueError(f"expected {self.hardware_class.dim} channel values, got {s.size}")
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise ValueError(f"sample {s} outside [0, 1]")
        self._buf[:, self._n % self.capacity] = s
        self._n += 1

    def values(self) -> np.ndarray:
        """Samples in chronological order, shape ``(dim, len(self))``."""
        if self._n < self.capacity:
            return self._buf[:, :self._n].copy()
        i = self._n % self.capacity
        return np.concatenate([self._buf[:, i:], self._buf[:, :i]], axis=1)

    def latest(self, n: int) -> np.ndarray:
        if n > len(self):
            raise ValueError(f"window holds {len(self)} samples, {n} requested")
        return self.values()[:, -n:]


def push_sample(window: BehaviouralWindow, sample: Sequence[float]) -> BehaviouralWindow:
    window.push(sample)
    return window


def extract_paratope(stream, hardware_class: HardwareClass, length: int = PARATOPE_LENGTH) -> Optional[Paratope]:
    """Paratope of the last ``length`` samples of ``stream``, or None if too short."""
    arr = np.asarray(stream, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] < length:
        return None
    return Paratope(arr[:, -length:], hardware_class)


@dataclass
class AntibodyPopulation:
    paratope: Paratope
    level: float = 0.0
    created_at: float = 0.0
    uid: int = 0

    @property
    def detecting(self) -> bool:
        return self.level > 1.0


@dataclass
class LabeledParatope:
    paratope: Paratope
    category: Category = Category.UNLABELED
    order: int = 1
    source_robot: Optional[int] = None
    source_time: Optional[float] = None
    source_run: Optional[int] = None

    def __post_init__(self):
        self.category = Category(self.category)
        if self.order < 1:
            raise ValueError("order must be >= 1")
        motor_label = self.category in MOTOR_CATEGORIES
        if motor_label and self.paratope.hardware_class is not HardwareClass.MOTOR:
            raise ValueError(f"{self.category.value} label requires a Motor paratope")
        if self.category is Category.SENSOR_FAULT and self.paratope.hardware_class is not HardwareClass.SENSOR:
            raise ValueError("SensorFault label requires a Sensor paratope")


@dataclass(frozen=True)
class AddResult:
    added: bool
    index: int  # new entry index if added, else index of the blocking entry


class Repertoire:
    """Deduplicated set of paratope-bearing entries of one hardware class.

    Entries are :class:`AntibodyPopulation` (a robot's private X) or
    :class:`LabeledParatope` (the shared Y). No two entries match above
    ``threshold`` under ``params``.
    """

    def __init__(self, hardware_class: HardwareClass, params: MatchParams = MEMBERSHIP_PARAMS,
                 threshold: float = MEMBERSHIP_THRESHOLD, entries: Iterable = ()):
        self.hardware_class = HardwareClass(hardware_class)
        self.params = params
        self.threshold = threshold
        self.entries: list = []
        self._stack: Optional[np.ndarray] = None
        for e in entries:
            self.try_add(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def paratope_array(self) -> np.ndarray:
        if self._stack is None or self._stack.shape[0] != len(self.entries):
            if self.entries:
                self._stack = np.stack([e.paratope.values for e in self.entries])
            else:
                dim = self.hardware_class.dim
                self._stack = np.zeros((0, dim, PARATOPE_LENGTH))
        return self._stack

    def try_add(self, entry) -> AddResult:
        p = entry.paratope
        if p.hardware_class is not self.hardware_class:
            raise ValueError(f"{p.hardware_class.value} paratope offered to {self.hardware_class.value} repertoire")
        if self.entries:
            # m(candidate, e): existing entries slide over the candidate
            scores = match_matrix(self.paratope_array(), p.values[None], self.params)[:, 0]
            over = np.flatnonzero(scores > self.threshold)
            if over.size:
                return AddResult(False, int(over[0]))
        self.entries.append(entry)
        self._stack = None
        return AddResult(True, len(self.entries) - 1)

    def remove_where(self, mask: Sequence[bool]) -> int:
        keep = [e for e, drop in zip(self.entries, mask) if not drop]
        removed = len(self.entries) - len(keep)
        if removed:
            self.entries = keep
            self._stack = None
        return removed


def try_add(repertoire: Repertoire, candidate) -> AddResult:
    return repertoire.try_add(candidate)


class LabeledRepertoire(Repertoire):
    """Swarm-shared repertoire of paratopes labeled faulty (Y)."""

    def merge(self, additions: Iterable[LabeledParatope]) -> List[AddResult]:
        """Offer additions in deterministic (robot, time) order."""
        ordered = sorted(additions, key=lambda e: (
            e.source_run if e.source_run is not None else -1,
            e.source_robot if e.source_robot is not None else -1,
            e.source_time if e.source_time is not None else -1.0,
        ))
        return [self.try_add(e) for e in ordered]

    def excluding_run(self, run: int) -> "LabeledRepertoire":
        out = LabeledRepertoire(self.hardware_class, self.params, self.threshold)
        out.entries = [e for e in self.entries if e.source_run != run]
        return out

    def copy(self) -> "LabeledRepertoire":
        out = LabeledRepertoire(self.hardware_class, self.params, self.threshold)
        out.entries = list(self.entries)
        return out

    def categories(self) -> List[Category]:
        return [e.category for e in self.entries]

    # serialization
    def to_dict(self) -> dict:
        return {
            "version": REPERTOIRE_VERSION,
            "hardware_class": self.hardware_class.value,
            "match_params": self.params.to_dict(),
            "threshold": self.threshold,
            "entries": [
                {
                    "values": e.paratope.values.tolist(),
                    "category": e.category.value,
                    "order": e.order,
                    "source_robot": e.source_robot,
                    "source_time": e.source_time,
                    "source_run": e.source_run,
                }
                for e in self.entries
            ],
        }

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledRepertoire":
        if d.get("version") != REPERTOIRE_VERSION:
            raise ValueError(f"unsupported repertoire version {d.get('version')!r}")
        hw = HardwareClass(d["hardware_class"])
        out = cls(hw, MatchParams.from_dict(d["match_params"]), float(d.get("threshold", MEMBERSHIP_THRESHOLD)))
        # stored entries are already deduplicated; load verbatim
        for e in d["entries"]:
            out.entries.append(LabeledParatope(
                paratope=Paratope(e["values"], hw),
                category=Category(e["category"]),
                order=int(e["order"]),
                source_robot=e.get("source_robot"),
                source_time=e.get("source_time"),
                source_run=e.get("source_run"),
            ))
        return out

    @classmethod
    def from_json(cls, text: str) -> "LabeledRepertoire":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json(indent=1))

    @classmethod
    def load(cls, path, expected_class: Optional[HardwareClass] = None) -> "LabeledRepertoire":
        with open(path) as fh:
            rep = cls.from_json(fh.read())
        if expected_class is not None and rep.hardware_class is not HardwareClass(expected_class):
            raise ValueError(
                f"{path}: repertoire is {rep.hardware_class.value}, expected {HardwareClass(expected_class).value}"
            )
        return rep


def merge_shared_Y(Y: LabeledRepertoire, additions: Iterable[LabeledParatope]) -> LabeledRepertoire:
    Y.merge(additions)
    return Y
