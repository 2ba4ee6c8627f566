#!/usr/bin/env python3
"""Energy behavior of learned integrators on the single pendulum.

Trains constant-mean GP integrators (no prior dynamics knowledge) in
maximal coordinates on a single recorded two-second trajectory, then rolls
them out for ten seconds against an explicit-Euler baseline and the nominal
variational integrator.  Explicit Euler's energy error grows without bound;
the variational and trained integrators stay in a band, and the trained
integrator's band level drops with more training samples.

Run:  python demos/energy_conservation.py
"""

import os

import numpy as np

from sympgp.harness import run_energy_experiment

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    os.makedirs(OUT, exist_ok=True)
    csv_path = os.path.join(OUT, "energy.csv")
    times, series = run_energy_experiment(seed=0, rollout_seconds=10.0,
                                          sizes=(10, 20), restarts=10,
                                          out_path=csv_path)

    def level(name, t0, t1):
        mask = (times >= t0) & (times <= t1)
        return float(np.mean(series[name][mask]))

    print("mean |energy error| [J] over selected windows:")
    print(f"{'series':16s} {'t in [0.5,1.5]':>14s} {'t in [4.5,5.5]':>14s} "
          f"{'t in [9,10]':>12s}")
    for name in series:
        print(f"{name:16s} {level(name, 0.5, 1.5):14.3e} "
              f"{level(name, 4.5, 5.5):14.3e} {level(name, 9.0, 10.0):12.3e}")
    print(f"\nexplicit Euler error keeps growing; the trained integrators "
          f"plateau (N=20 lower than N=10).")
    print(f"wrote {csv_path}")
    print("render with: python plots/plots.py --kind energy "
          f"--in {csv_path} --out {os.path.join(OUT, 'energy.png')}")


if __name__ == "__main__":
    main()
