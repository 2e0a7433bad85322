"""Evaluation quantities computed from experiment logs."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .dynamics import D0, Detection
from .matching import HardwareClass
from .repertoire import Category
from .sim import ExperimentLog

CONFUSION_CATEGORIES = (Category.BOTH_MOTORS, Category.LEFT_MOTOR, Category.RIGHT_MOTOR, Category.FALSE_POSITIVE)


def lower_median(values: Iterable[float]) -> Optional[float]:
    """Median that picks the lower middle element for even counts; None if empty."""
    v = sorted(x for x in values if x is not None)
    if not v:
        return None
    return float(v[(len(v) - 1) // 2])


def compute_delta(log: ExperimentLog, detection) -> float:
    """Smallest relevant coefficient at the detection tick.

    ``detection`` is a :class:`Detection` or a dict with ``robot``,
    ``tick`` and ``hardware_class``.
    """
    if isinstance(detection, Detection):
        robot, tick, hw = detection.robot, detection.tick, detection.hardware_class
    else:
        robot, tick, hw = detection["robot"], detection["tick"], detection["hardware_class"]
    t = int(tick) - 1
    if HardwareClass(hw) is HardwareClass.MOTOR:
        return float(min(log.data["d_l"][t, robot], log.data["d_r"][t, robot]))
    return float(log.data["d_s"][t, robot])


def faulty_mask(log: ExperimentLog, hw: Optional[HardwareClass] = None, d0: float = D0) -> np.ndarray:
    """Ground-truth faulty state per tick and robot (``d <= d0``)."""
    d = log.data
    motor = np.minimum(d["d_l"], d["d_r"]) <= d0
    sensor = d["d_s"] <= d0
    if hw is None:
        return motor | sensor
    return motor if HardwareClass(hw) is HardwareClass.MOTOR else sensor


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def compute_psi(log: ExperimentLog, robot: Optional[int] = None, hw: Optional[HardwareClass] = None,
                d0: float = D0) -> tuple:
    """(Ψ_T, Ψ_F) for one robot, or pooled over all robots when ``robot`` is None.

    With ``hw`` given, both the faulty state and the detection flag refer to
    that hardware class only. Either value is None when its denominator is 0.
    """
    faulty = faulty_mask(log, hw, d0)
    det = log.detected(hw)
    if robot is not None:
        faulty, det = faulty[:, robot], det[:, robot]
    n_f = int(faulty.sum())
    n_h = int(faulty.size - n_f)
    return _ratio(int((det & faulty).sum()), n_f), _ratio(int((det & ~faulty).sum()), n_h)


def rising_edges(flags: np.ndarray) -> np.ndarray:
    """Indices where a boolean series turns on."""
    f = np.asarray(flags, bool)
    prev = np.concatenate([[False], f[:-1]])
    return np.flatnonzero(f & ~prev)


def detection_frequency(log: ExperimentLog, hw: Optional[HardwareClass] = None, d0: float = D0) -> Dict[int, dict]:
    """Per-robot counts of detection onsets, split by ground truth at onset."""
    det = log.detected(hw)
    faulty = faulty_mask(log, hw, d0)
    out = {}
    for r in range(log.n_robots):
        edges = rising_edges(det[:, r])
        tp = int(faulty[edges, r].sum())
        out[r] = {"tp": tp, "fp": int(len(edges) - tp)}
    return out


def fp_crossings(log: ExperimentLog, hw: Optional[HardwareClass] = None, d0: float = D0) -> int:
    return sum(v["fp"] for v in detection_frequency(log, hw, d0).values())


def sustained_fp(log: ExperimentLog, hw: Optional[HardwareClass] = None, d0: float = D0,
                 min_cycles: int = 2) -> int:
    """Healthy-time detection runs lasting at least ``min_cycles`` cycles."""
    from .sim import CYCLE_TICKS
    det = log.detected(hw) & ~faulty_mask(log, hw, d0)
    count = 0
    for r in range(log.n_robots):
        f = det[:, r]
        run = 0
        for on in f:
            run = run + 1 if on else 0
            if run == min_cycles * CYCLE_TICKS:
                count += 1
    return count


def onset_deltas(log: ExperimentLog, hw: HardwareClass, robot: Optional[int] = None) -> List[float]:
    """δ at each detection onset (the first cycle of each contiguous detected stretch)."""
    hw = HardwareClass(hw)
    det = log.detected(hw)
    out = []
    robots = range(log.n_robots) if robot is None else [robot]
    for r in robots:
        for t in rising_edges(det[:, r]):
            if hw is HardwareClass.MOTOR:
                out.append(float(min(log.data["d_l"][t, r], log.data["d_r"][t, r])))
            else:
                out.append(float(log.data["d_s"][t, r]))
    return out


def first_delta(log: ExperimentLog, hw: HardwareClass, robot: int, d0: Optional[float] = None) -> Optional[float]:
    """δ at the robot's first detection onset (optionally the first while faulty)."""
    hw = HardwareClass(hw)
    det = log.detected(hw)[:, robot]
    if d0 is not None:
        det = det & faulty_mask(log, hw, d0)[:, robot]
    edges = rising_edges(det)
    if not len(edges):
        return None
    t = edges[0]
    if hw is HardwareClass.MOTOR:
        return float(min(log.data["d_l"][t, robot], log.data["d_r"][t, robot]))
    return float(log.data["d_s"][t, robot])


@dataclass
class Confusion:
    counts: Dict[str, Dict[str, int]] = field(default_factory=dict)  # truth -> predicted -> n

    def add(self, truth, predicted) -> None:
        t = truth.value if isinstance(truth, Category) else str(truth)
        p = predicted.value if isinstance(predicted, Category) else str(predicted)
        row = self.counts.setdefault(t, {})
        row[p] = row.get(p, 0) + 1

    def total(self, exclude_fp: bool = True) -> int:
        return sum(n for t, row in self.counts.items() if not (exclude_fp and t == Category.FALSE_POSITIVE.value)
                   for n in row.values())

    def correct(self, exclude_fp: bool = True) -> int:
        return sum(row.get(t, 0) for t, row in self.counts.items()
                   if not (exclude_fp and t == Category.FALSE_POSITIVE.value))

    def accuracy(self, exclude_fp: bool = True) -> Optional[float]:
        return _ratio(self.correct(exclude_fp), self.total(exclude_fp))

    def to_dict(self) -> dict:
        return {"counts": self.counts, "accuracy": self.accuracy(), "accuracy_with_fp": self.accuracy(False),
                "diagnosed": self.total(), "correct": self.correct()}


def diagnosis_confusion(detections: Iterable[Detection], onsets_only: bool = True) -> Confusion:
    """Truth versus predicted sub-class over motor detections.

    The corrected rate excludes detections whose ground truth is a false
    positive. With ``onsets_only`` each population is counted once, at the
    cycle it first crossed the threshold.
    """
    conf = Confusion()
    for det in detections:
        if det.hardware_class is not HardwareClass.MOTOR or det.truth is None:
            continue
        if onsets_only and not det.new_uids:
            continue
        pred = det.diagnosis.label if det.diagnosis is not None else "Undiagnosed"
        conf.add(det.truth, pred)
    return conf


@dataclass
class RunMetrics:
    run: Optional[int]
    psi_t: Dict[int, Optional[float]]
    psi_f: Dict[int, Optional[float]]
    deltas: Dict[int, List[float]]
    frequency: Dict[int, dict]
    pooled_psi_t: Optional[float]
    pooled_psi_f: Optional[float]
    resources: int
    lost: List[int]
    final_d: Dict[int, List[float]]
    power_consumed: Optional[float]
    confusion: dict

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "psi_t": {str(k): v for k, v in self.psi_t.items()},
            "psi_f": {str(k): v for k, v in self.psi_f.items()},
            "deltas": {str(k): v for k, v in self.deltas.items()},
            "frequency": {str(k): v for k, v in self.frequency.items()},
            "pooled_psi_t": self.pooled_psi_t,
            "pooled_psi_f": self.pooled_psi_f,
            "resources": self.resources,
            "lost": self.lost,
            "n_lost": len(self.lost),
            "final_d": {str(k): v for k, v in self.final_d.items()},
            "power_consumed": self.power_consumed,
            "confusion": self.confusion,
        }


def run_metrics(log: ExperimentLog, hw: Optional[HardwareClass] = None, d0: float = D0) -> RunMetrics:
    n = log.n_robots
    psi = {r: compute_psi(log, r, hw, d0) for r in range(n)}
    pooled = compute_psi(log, None, hw, d0)
    deltas = {r: [] for r in range(n)}
    classes = [HardwareClass(hw)] if hw is not None else list(HardwareClass)
    for c in classes:
        for r in range(n):
            deltas[r].extend(onset_deltas(log, c, r))
    final = {r: [float(log.data[k][-1, r]) for k in ("d_l", "d_r", "d_s")] for r in range(n)}
    return RunMetrics(
        run=log.run,
        psi_t={r: v[0] for r, v in psi.items()},
        psi_f={r: v[1] for r, v in psi.items()},
        deltas=deltas,
        frequency=detection_frequency(log, hw, d0),
        pooled_psi_t=pooled[0],
        pooled_psi_f=pooled[1],
        resources=log.resources,
        lost=log.lost_robots(),
        final_d=final,
        power_consumed=log.power_consumed(),
        confusion=diagnosis_confusion(log.detections).to_dict(),
    )


def foraging_summary(runs: Sequence[ExperimentLog], baseline: Sequence[ExperimentLog]) -> dict:
    """Median resources of ``runs`` as a percentage of the paired baseline median."""
    res = [r.resources for r in runs]
    base = [b.resources for b in baseline]
    med, bmed = lower_median(res), lower_median(base)
    return {
        "resources": res,
        "baseline_resources": base,
        "median": med,
        "baseline_median": bmed,
        "percent_of_baseline": None if not bmed else 100.0 * med / bmed,
        "lost": [len(r.lost_robots()) for r in runs],
        "median_lost": lower_median(len(r.lost_robots()) for r in runs),
    }


def percent_of_baseline(value: float, baseline: float) -> float:
    return 100.0 * value / baseline


def aggregate(metrics: Sequence[RunMetrics]) -> dict:
    """Medians across replicates of the pooled per-run quantities."""
    all_deltas = [d for m in metrics for ds in m.deltas.values() for d in ds]
    return {
        "replicates": len(metrics),
        "median_psi_t": lower_median(m.pooled_psi_t for m in metrics),
        "median_psi_f": lower_median(m.pooled_psi_f for m in metrics),
        "median_delta": lower_median(all_deltas),
        "median_resources": lower_median(m.resources for m in metrics),
        "median_lost": lower_median(len(m.lost) for m in metrics),
    }


CSV_COLUMNS = ("run", "pooled_psi_t", "pooled_psi_f", "median_delta", "tp", "fp", "resources", "n_lost",
               "power_consumed")


def metrics_csv(metrics: Sequence[RunMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in metrics:
        ds = [d for v in m.deltas.values() for d in v]
        w.writerow([m.run, m.pooled_psi_t, m.pooled_psi_f, lower_median(ds),
                    sum(f["tp"] for f in m.frequency.values()), sum(f["fp"] for f in m.frequency.values()),
                    m.resources, len(m.lost), m.power_consumed])
    return buf.getvalue()


def metrics_json(metrics: Sequence[RunMetrics]) -> str:
    return json.dumps({"runs": [m.to_dict() for m in metrics], "aggregate": aggregate(metrics)}, indent=1)
