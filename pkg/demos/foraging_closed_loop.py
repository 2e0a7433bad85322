"""Foraging under wear with three repair policies.

Every robot degrades and carries a finite battery. The swarm forages with
no detector, with the ground-truth oracle at d0 = 0.75, and with the
zeroth-order model running online. Robots flagged as faulty return to the
base for repair.

    python demos/foraging_closed_loop.py [seed]
"""

import sys

from aapd import sim

POLICIES = {
    "none": sim.DetectionConfig(sim.DetectionKind.NONE),
    "oracle 0.75": sim.DetectionConfig(sim.DetectionKind.ORACLE, d0=0.75),
    "online model": sim.DetectionConfig(sim.DetectionKind.AAPD),
}


def main(seed=0):
    base = sim.ScenarioConfig(n_robots=10, p_max=1.0, faults=[sim.gradual()] * 10, seed=seed)
    print(f"{'policy':<14}{'resources':>10}{'repairs':>9}{'lost':>6}")
    for name, det in POLICIES.items():
        log = sim.run_experiment(base.replace(detection=det))
        repairs = len(log.events_of("repair"))
        print(f"{name:<14}{log.resources:>10}{repairs:>9}{len(log.lost_robots()):>6}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
