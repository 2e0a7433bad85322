"""Detect and diagnose a single degrading motor, order by order.

Records a handful of 15-minute runs in which robot 0's motors wear out,
replays the zeroth-order model over them, then builds a first-order
repertoire from the other runs' detections (leave-one-out) and replays
again with diagnosis switched on.

    python demos/detect_and_diagnose.py [runs]
"""

import sys

from aapd import metrics, sim
from aapd.dynamics import build_next_order_Y
from aapd.matching import HardwareClass

MOTOR = HardwareClass.MOTOR


def record(n_runs):
    faults = [sim.gradual("lr", (0.9, 1.0))] + [sim.static()] * 9
    return [sim.run_experiment(sim.ScenarioConfig(n_robots=10, faults=faults, seed=40 + i), run=i)
            for i in range(n_runs)]


def main(n_runs=4):
    logs = record(n_runs)
    zeroth = [sim.replay(log, classes=(MOTOR,)) for log in logs]
    detections = [d for r in zeroth for d in r.detections]
    print("run  psi_T(0th)  psi_T(1st)  first delta  diagnoses")
    for i, log in enumerate(logs):
        Y = build_next_order_Y(detections, None, MOTOR, 1, holdout_run=i)
        first = sim.replay(log, Y={MOTOR: Y}, classes=(MOTOR,))
        p0 = metrics.compute_psi(zeroth[i], 0, MOTOR)[0]
        p1 = metrics.compute_psi(first, 0, MOTOR)[0]
        delta = metrics.first_delta(first, MOTOR, 0)
        labels = sorted({d.diagnosis.label for d in first.detections if d.new_uids and d.diagnosis})
        fmt = lambda v: "   -  " if v is None else f"{v:6.2f}"
        print(f"{i:3d}  {fmt(p0):>10}  {fmt(p1):>10}  {fmt(delta):>11}  {', '.join(labels) or '-'}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 4)
