#!/usr/bin/env python3
"""Sweep the preemptible fraction of the demo workload and report how many
instances get evicted and what utilization the pool reaches.

    python3 scripts/preemption_pressure.py
    python3 scripts/preemption_pressure.py --fractions 0 0.2 0.4 0.6 --seed 3
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from cloudshare.scenario import GeneratorSpec, load_scenario
from cloudshare.sim import Simulation

SCENARIO = Path(__file__).parent.parent / "scenarios" / "preemption_demo.yaml"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fractions", type=float, nargs="+",
                        default=[0.0, 0.2, 0.4, 0.6, 0.8])
    parser.add_argument("--seed", type=int, default=99)
    args = parser.parse_args()

    print("fraction  preempted  started  util_vcpus  p95_wait")
    for fraction in args.fractions:
        scenario = load_scenario(SCENARIO)
        scenario.seed = args.seed
        g = scenario.generator
        scenario.generator = GeneratorSpec(
            rate=g.rate, users=g.users, flavor_mix=g.flavor_mix,
            duration=g.duration, preemptible_fraction=fraction,
        )
        sim = Simulation(scenario)
        _, summary = sim.run()
        print(
            f"{fraction:8.2f}  {summary['preemptions']:9d}  "
            f"{summary['requests']['started']:7d}  "
            f"{summary['utilization_integral']['vcpus']:10.4f}  "
            f"{summary['waits']['p95']:8.1f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
