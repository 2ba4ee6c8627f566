#!/usr/bin/env python3
"""One-step uncertainty bound for the projected velocity prediction.

The projection onto the constraint manifold destroys Gaussianity, but a
sampled Lipschitz constant L of the projection combined with a calibrated
scaling beta gives the high-probability bound

    |v(sample) - v(mean)| < sqrt(L^2 beta) * sigma(z)   per dimension.

The demo trains a maximal-coordinate pendulum model, estimates L by
finite-difference sampling of the projection Jacobian, calibrates beta at
confidence delta = 0.05, and checks the bound by Monte Carlo on held-out
states.

Run:  python demos/uncertainty_bound.py
"""

import os

from sympgp.harness import ExperimentConfig, generate_dataset, run_bound_experiment

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    os.makedirs(OUT, exist_ok=True)
    cfg = ExperimentConfig(system="pendulum", parameterizations=("maximal",),
                           n_train_traj=10, n_test_traj=6, restarts=8, seed=0)
    print("generating ground truth ...")
    dataset = generate_dataset(cfg)
    print("training, estimating L, calibrating beta, running Monte Carlo ...")
    report = run_bound_experiment(dataset, param="maximal", train_size=64,
                                  n_cal_states=40, cal_draws=1000,
                                  n_test_states=100, test_draws=2000,
                                  out_path=os.path.join(OUT, "bound.json"))
    print(f"\nLipschitz L        : {report['lipschitz_L']:.4f}")
    print(f"calibrated beta    : {report['beta']:.4f}")
    print(f"gamma = L^2 beta   : {report['gamma']:.4f}")
    print(f"target delta       : {report['delta']}")
    print(f"violation rate     : {report['violation_rate']:.4f}  "
          f"(over {report['n_test_states']} states x {report['draws']} draws)")
    print(f"\nwrote {os.path.join(OUT, 'bound.json')}")


if __name__ == "__main__":
    main()
