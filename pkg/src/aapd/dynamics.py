"""Antibody population dynamics: stimulation, suppression, detection, diagnosis.

Each robot keeps one repertoire of antibody populations per hardware class.
At every cycle boundary the level of each population is advanced by one
discrete step::

    dx = m(p, W_self) * (1 + k1 * max_j m(p, Y_j)) - k2_hat * sum_n m(p, W_n) - k3

Populations that fall below zero are removed; those above ``F`` flag their
robot as faulty for the following cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .matching import HardwareClass, MatchParams, Paratope, match_matrix
from .repertoire import (
    MEMBERSHIP_PARAMS,
    MEMBERSHIP_THRESHOLD,
    AntibodyPopulation,
    Category,
    LabeledParatope,
    LabeledRepertoire,
    Repertoire,
)

FAULT_THRESHOLD = 1.0
REFERENCE_SWARM = 10  # swarm size the suppression gain was tuned for
D0 = 0.75


@dataclass(frozen=True)
class DynamicsCoeffs:
    k1: float
    k2: float
    k3: float
    window_params: MatchParams
    y_params: MatchParams
    F: float = FAULT_THRESHOLD
    weights: Optional[tuple] = None  # per-channel weights, uniform if None

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValueError("k1, k2, k3 must be positive")

    def to_dict(self) -> dict:
        return {
            "k1": self.k1, "k2": self.k2, "k3": self.k3, "F": self.F,
            "window_params": self.window_params.to_dict(),
            "y_params": self.y_params.to_dict(),
            "weights": list(self.weights) if self.weights is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsCoeffs":
        return cls(
            k1=float(d["k1"]), k2=float(d["k2"]), k3=float(d["k3"]), F=float(d.get("F", FAULT_THRESHOLD)),
            window_params=MatchParams.from_dict(d["window_params"]),
            y_params=MatchParams.from_dict(d["y_params"]),
            weights=tuple(d["weights"]) if d.get("weights") is not None else None,
        )


# Published hand-tuned values.
PUBLISHED_MOTOR_COEFFS = DynamicsCoeffs(k1=0.24, k2=0.3, k3=1.2,
                                        window_params=MatchParams(s=4.0, g=5, k=0),
                                        y_params=MatchParams(s=1.5, g=1, k=10))
PUBLISHED_SENSOR_COEFFS = DynamicsCoeffs(k1=0.18, k2=0.3, k3=1.2,
                                         window_params=MatchParams(s=5.0, g=5, k=0),
                                         y_params=MatchParams(s=3.3, g=1, k=10))
PUBLISHED_COEFFS = {HardwareClass.MOTOR: PUBLISHED_MOTOR_COEFFS, HardwareClass.SENSOR: PUBLISHED_SENSOR_COEFFS}

# Defaults re-tuned for this simulator: the published suppression and decay
# overwhelm self-stimulation here, so populations never reach F. Both decay
# terms are halved, and motor suppression with them.
MOTOR_COEFFS = replace(PUBLISHED_MOTOR_COEFFS, k2=0.15, k3=0.6)
SENSOR_COEFFS = replace(PUBLISHED_SENSOR_COEFFS, k3=0.6)
DEFAULT_COEFFS = {HardwareClass.MOTOR: MOTOR_COEFFS, HardwareClass.SENSOR: SENSOR_COEFFS}


def scale_k2(k2: float, n_robots: int) -> float:
    """Suppression gain rescaled so that ``k2_hat * (N - 1)`` stays ``9 * k2``."""
    if n_robots < 2:
        raise ValueError("suppression needs at least one neighbour (N >= 2)")
    return k2 * (REFERENCE_SWARM - 1) / (n_robots - 1)


def _stack(windows) -> np.ndarray:
    return np.stack([np.asarray(w, float) for w in windows]) if len(windows) else None


def population_step(x: float, paratope, w_self, neighbour_windows: Sequence, Y, coeffs: DynamicsCoeffs,
                    k2_hat: Optional[float] = None) -> float:
    """Rate of change of one population level (the caller applies ``x += dx``)."""
    p = paratope.values if isinstance(paratope, Paratope) else np.asarray(paratope, float)
    wp = coeffs.window_params
    m_self = match_matrix(p[None], np.asarray(w_self, float)[None], wp, coeffs.weights)[0, 0]
    if len(neighbour_windows):
        m_nb = match_matrix(p[None], _stack(neighbour_windows), wp, coeffs.weights)[0].sum()
    else:
        m_nb = 0.0
    m_y = _max_y_match(p[None], Y, coeffs)[0]
    k2 = coeffs.k2 if k2_hat is None else k2_hat
    return float(m_self * (1.0 + coeffs.k1 * m_y) - k2 * m_nb - coeffs.k3)


def _y_array(Y) -> Optional[np.ndarray]:
    if Y is None:
        return None
    if isinstance(Y, Repertoire):
        return Y.paratope_array() if len(Y) else None
    arrs = [e.paratope.values if hasattr(e, "paratope") else (e.values if isinstance(e, Paratope) else e) for e in Y]
    return np.stack(arrs) if arrs else None


def _y_scores(P: np.ndarray, Y, coeffs: DynamicsCoeffs) -> Optional[np.ndarray]:
    """``out[j, i] = m(P[i], Y[j])``, or None for an empty Y."""
    Ya = _y_array(Y)
    if Ya is None or P.shape[0] == 0:
        return None
    return match_matrix(Ya, P, coeffs.y_params, coeffs.weights)


def _max_y_match(P: np.ndarray, Y, coeffs: DynamicsCoeffs) -> np.ndarray:
    s = _y_scores(P, Y, coeffs)
    return np.zeros(P.shape[0]) if s is None else s.max(axis=0)


@dataclass
class Diagnosis:
    hardware_class: HardwareClass
    category: Optional[Category]  # None when no Y entry matches
    score: float = 0.0
    y_index: Optional[int] = None

    @property
    def label(self) -> str:
        return self.category.value if self.category is not None else "Undiagnosed"


@dataclass
class Detection:
    robot: int
    hardware_class: HardwareClass
    time: float
    cycle: int
    paratopes: List[Paratope]  # every population above F this cycle
    population_uids: List[int]
    levels: List[float]
    lead: int = 0  # index into the lists of the population used for diagnosis
    new_uids: List[int] = field(default_factory=list)  # crossed F for the first time
    diagnosis: Optional[Diagnosis] = None
    delta: Optional[float] = None
    truth: Optional[Category] = None
    run: Optional[int] = None
    tick: Optional[int] = None

    @property
    def paratope(self) -> Paratope:
        return self.paratopes[self.lead]


def diagnose(detection: Detection, Y: Optional[LabeledRepertoire], params: Optional[MatchParams] = None,
             weights=None) -> Diagnosis:
    """Hardware class from the repertoire; sub-class from the best-matching Y label."""
    hw = detection.hardware_class
    if Y is None or len(Y) == 0 or not detection.paratopes:
        return Diagnosis(hw, None)
    if params is None:
        params = DEFAULT_COEFFS[hw].y_params
    P = np.stack([p.values for p in detection.paratopes])
    scores = match_matrix(Y.paratope_array(), P, params, weights)  # (nY, n_pops)
    j, i = np.unravel_index(int(np.argmax(scores)), scores.shape)
    best = float(scores[j, i])
    if best <= 0.0:
        return Diagnosis(hw, None)
    detection.lead = int(i)
    return Diagnosis(hw, Y[int(j)].category, best, int(j))


def label_from_truth(hw: HardwareClass, d_l: float, d_r: float, d0: float = D0) -> Category:
    """Ground-truth category of a detection from the coefficients at that instant."""
    if HardwareClass(hw) is HardwareClass.SENSOR:
        return Category.SENSOR_FAULT
    left, right = d_l <= d0, d_r <= d0
    if left and right:
        return Category.BOTH_MOTORS
    if left:
        return Category.LEFT_MOTOR
    if right:
        return Category.RIGHT_MOTOR
    return Category.FALSE_POSITIVE


@dataclass
class CycleResult:
    time: float
    cycle: int
    detections: List[Detection]
    removed: Dict[HardwareClass, int]
    detected: Dict[HardwareClass, np.ndarray]  # (N,) bool per class


class AAPDEngine:
    """Per-robot repertoires plus the cycle update.

    Parameters
    ----------
    n_robots : int
    coeffs : mapping HardwareClass -> DynamicsCoeffs
    Y : mapping HardwareClass -> LabeledRepertoire, optional
        Faulty-labeled repertoires. Frozen unless ``learn_online``.
    rescale_k2 : bool
        Use ``scale_k2(k2, n_robots)`` as the suppression gain.
    """

    def __init__(self, n_robots: int, coeffs: Optional[Mapping] = None, Y: Optional[Mapping] = None,
                 rescale_k2: bool = True, membership_params: MatchParams = MEMBERSHIP_PARAMS,
                 u: float = MEMBERSHIP_THRESHOLD, learn_online: bool = False, classes=tuple(HardwareClass)):
        self.n = n_robots
        self.coeffs = dict(DEFAULT_COEFFS if coeffs is None else coeffs)
        self.Y: Dict[HardwareClass, LabeledRepertoire] = {}
        for hw in HardwareClass:
            y = None if Y is None else Y.get(hw)
            self.Y[hw] = y if y is not None else LabeledRepertoire(hw, membership_params, u)
        self.classes = tuple(HardwareClass(c) for c in classes)
        self.rescale_k2 = rescale_k2
        self.learn_online = learn_online
        self.repertoires = [{hw: Repertoire(hw, membership_params, u) for hw in HardwareClass}
                            for _ in range(n_robots)]
        self._uid = 0
        self.cycles = 0
        self._ever_detected: Dict[int, bool] = {}

    def k2_hat(self, hw: HardwareClass) -> float:
        k2 = self.coeffs[hw].k2
        return scale_k2(k2, self.n) if self.rescale_k2 else k2

    def add_paratope(self, robot: int, paratope: Paratope, t: float):
        """Offer a freshly extracted paratope to the robot's repertoire at level 0."""
        hw = paratope.hardware_class
        if hw not in self.classes:
            return None
        self._uid += 1
        pop = AntibodyPopulation(paratope, 0.0, t, self._uid)
        return self.repertoires[robot][hw].try_add(pop)

    def cycle(self, t: float, windows: Mapping[HardwareClass, np.ndarray],
              computing: Optional[Mapping[HardwareClass, np.ndarray]] = None,
              alive: Optional[np.ndarray] = None) -> CycleResult:
        """Advance every population by one step.

        Parameters
        ----------
        windows : mapping HardwareClass -> ndarray (N, dim, |W|)
            Frozen snapshot of every robot's behavioural window.
        computing : mapping HardwareClass -> bool array (N,), optional
            Robots whose populations update this cycle; others are frozen.
        alive : bool array (N,), optional
            Robots able to exchange data. Dead robots neither compute nor
            contribute neighbour windows.
        """
        self.cycles += 1
        alive = np.ones(self.n, bool) if alive is None else np.asarray(alive, bool)
        detections: List[Detection] = []
        removed: Dict[HardwareClass, int] = {}
        detected: Dict[HardwareClass, np.ndarray] = {}
        for hw in self.classes:
            co = self.coeffs[hw]
            W = np.asarray(windows[hw], float)
            comp = alive.copy() if computing is None else (np.asarray(computing[hw], bool) & alive)
            owners, pops = [], []
            for r in range(self.n):
                if comp[r]:
                    for pop in self.repertoires[r][hw]:
                        owners.append(r)
                        pops.append(pop)
            if pops:
                P = np.stack([p.paratope.values for p in pops])
                M = match_matrix(P, W, co.window_params, co.weights)  # (n_pops, N)
                owners_a = np.asarray(owners)
                m_self = M[np.arange(len(pops)), owners_a]
                nb_mask = np.broadcast_to(alive, M.shape).copy()
                nb_mask[np.arange(len(pops)), owners_a] = False
                m_nb = (M * nb_mask).sum(axis=1)
                m_y = _max_y_match(P, self.Y[hw], co)
                dx = m_self * (1.0 + co.k1 * m_y) - self.k2_hat(hw) * m_nb - co.k3
                for pop, d in zip(pops, dx):
                    pop.level += float(d)
            n_removed = 0
            flags = np.zeros(self.n, bool)
            for r in range(self.n):
                rep = self.repertoires[r][hw]
                n_removed += rep.remove_where([p.level < 0.0 for p in rep])
                above = [p for p in rep if p.level > co.F]
                if above:
                    flags[r] = True
                    new = [p.uid for p in above if not self._ever_detected.get(p.uid)]
                    for p in above:
                        self._ever_detected[p.uid] = True
                    lead = int(np.argmax([p.level for p in above]))
                    det = Detection(r, hw, t, self.cycles, [p.paratope for p in above], [p.uid for p in above],
                                    [p.level for p in above], lead, new)
                    det.diagnosis = diagnose(det, self.Y[hw], co.y_params, co.weights)
                    detections.append(det)
            removed[hw] = n_removed
            detected[hw] = flags
        if self.learn_online:
            for hw in self.classes:
                self.Y[hw].merge(
                    LabeledParatope(d.paratopes[k], Category.UNLABELED, 1, d.robot, d.time)
                    for d in detections if d.hardware_class is hw
                    for k, uid in enumerate(d.population_uids) if uid in d.new_uids
                )
        return CycleResult(t, self.cycles, detections, removed, detected)

    def reset_robot(self, robot: int, hw: Optional[HardwareClass] = None) -> None:
        """Drop populations above threshold after a repair."""
        for c in ([hw] if hw is not None else list(HardwareClass)):
            rep = self.repertoires[robot][c]
            F = self.coeffs[c].F
            rep.remove_where([p.level > F for p in rep])


def build_next_order_Y(detections: Iterable[Detection], Y_n: Optional[LabeledRepertoire], hardware_class,
                       order: int, labeler=None, holdout_run: Optional[int] = None,
                       membership_params: MatchParams = MEMBERSHIP_PARAMS,
                       u: float = MEMBERSHIP_THRESHOLD) -> LabeledRepertoire:
    """Grow ``Y_n`` with the paratopes of detected populations.

    Each population contributes once, at the cycle it first crossed the
    threshold. ``labeler(detection) -> Category`` assigns the ground-truth
    label; detections must carry a ``run`` attribute for ``holdout_run``.
    """
    hw = HardwareClass(hardware_class)
    if Y_n is not None:
        out = Y_n.excluding_run(holdout_run) if holdout_run is not None else Y_n.copy()
    else:
        out = LabeledRepertoire(hw, membership_params, u)
    additions = []
    for det in detections:
        if det.hardware_class is not hw:
            continue
        run = det.run
        if holdout_run is not None and run == holdout_run:
            continue
        cat = labeler(det) if labeler is not None else (det.truth or Category.UNLABELED)
        for k, uid in enumerate(det.population_uids):
            if uid in det.new_uids:
                additions.append(LabeledParatope(det.paratopes[k], cat, order, det.robot, det.time, run))
    out.merge(additions)
    return out
