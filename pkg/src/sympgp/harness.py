"""Experiment pipeline: ground-truth generation, training-set assembly,
energy/drift experiments, and multi-step prediction error sweeps.

Ground truth is the perturbed system (scaled masses/inertias plus joint
friction) integrated with the fine-step symplectic Euler method in minimal
coordinates; every coordinate description observes the same physical
trajectories through its own state mapping.  Training observations carry
additive Gaussian noise; test rollouts start from noiseless states.

All randomness derives from one master seed through tagged child streams,
so datasets, fits, and evaluation summaries are bit-reproducible regardless
of process count or execution order.
"""

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DatasetError, InputError, SolverError, SympgpError
from .gp import TrainingSet
from .gpvi import (GpviModel, UncertaintyBound, bound_violation_rate,
                   calibrate_beta, estimate_lipschitz, step_gp, train)
from .integrators import rollout, step_nominal
from .io import write_csv_atomic, write_json_atomic
from .rng import child_rng
from .solvers import SolverConfig
from .systems import MechSystem, State, build_system, perturb, random_initial_state

__all__ = [
    "ExperimentConfig", "Dataset", "EvaluationSummary",
    "generate_dataset", "subsample_training", "evaluate_multistep",
    "run_energy_experiment", "run_drift_experiment", "run_prediction_sweep",
    "run_bound_experiment", "SUMMARY_COLUMNS", "ENERGY_COLUMNS", "DRIFT_COLUMNS",
]

SUMMARY_COLUMNS = ("n_samples", "variant", "median_mse", "p10", "p90", "failures")
ENERGY_COLUMNS = ("t", "explicit_euler", "nominal_vi", "gpvi_n10", "gpvi_n20")
DRIFT_COLUMNS = ("t", "explicit_euler", "gpvi_projected")

# The fourbar sweeps through kinematic singularities (parallelogram branch
# crossings) on essentially every trajectory; crossings are fine, but an
# occasional crossing flips the branch and injects a large amount of
# spurious energy.  Friction can only remove energy, so a single-step
# energy increase beyond integrator noise marks a corrupted trajectory.
_ENERGY_JUMP_LIMIT = 0.05
_MAX_TRAJECTORY_ATTEMPTS = 60


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of the evaluation pipeline (full-scale defaults; tests use
    scaled-down copies)."""

    system: str = "pendulum"
    parameterizations: tuple = ("minimal", "sincos", "maximal")
    n_train_traj: int = 100
    n_test_traj: int = 100
    traj_seconds: float = 2.0
    fine_dt: float = 1e-4
    coarse_dt: float = 1e-2
    noise_sigma: float = 1e-3
    sizes: tuple = (8, 16, 32, 64, 128, 256, 512)
    horizon: int = 20
    restarts: int = 100
    repetitions: int = 10
    prior_mean: str = "auto"     # auto: pendulum/cartpole nominal, others constant
    perturb_ground_truth: bool = True
    seed: int = 0

    def __post_init__(self):
        ratio = self.coarse_dt / self.fine_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise InputError("coarse_dt must be an integer multiple of fine_dt")
        if self.prior_mean not in ("auto", "nominal", "constant"):
            raise InputError("prior_mean must be auto, nominal or constant")

    @property
    def substeps(self) -> int:
        return round(self.coarse_dt / self.fine_dt)

    @property
    def n_coarse_states(self) -> int:
        return round(self.traj_seconds / self.coarse_dt)

    def resolved_prior_mean(self) -> str:
        if self.prior_mean != "auto":
            return self.prior_mean
        return "nominal" if self.system in ("pendulum", "cartpole") else "constant"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["parameterizations"] = list(self.parameterizations)
        d["sizes"] = list(self.sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "parameterizations" in d:
            d["parameterizations"] = tuple(d["parameterizations"])
        if "sizes" in d:
            d["sizes"] = tuple(d["sizes"])
        return cls(**d)


@dataclass
class Dataset:
    """Ground-truth data viewed through every requested parameterization."""

    config: ExperimentConfig
    gt_config: dict
    train: dict                  # param -> TrainingSet (pooled pairs)
    test_states: dict            # param -> list of (n_states, 2 dim) arrays
    test_reference: list         # per test traj: (n_states, n_pts, 2)

    def save(self, out_dir):
        base = os.path.join(out_dir, "data", self.config.system)
        for param in self.config.parameterizations:
            doc = {
                "config": self.config.to_dict(),
                "gt_system": self.gt_config,
                "parameterization": param,
                "train_inputs": self.train[param].inputs.tolist(),
                "train_targets": self.train[param].targets.tolist(),
                "test_states": [a.tolist() for a in self.test_states[param]],
                "test_reference": [a.tolist() for a in self.test_reference],
            }
            write_json_atomic(os.path.join(base, param, "dataset.json"), doc)

    @classmethod
    def load(cls, out_dir, system, parameterizations) -> "Dataset":
        train = {}
        test_states = {}
        config = None
        gt_config = None
        reference = None
        for param in parameterizations:
            path = os.path.join(out_dir, "data", system, param, "dataset.json")
            if not os.path.exists(path):
                raise FileNotFoundError(
                    f"missing dataset {path}; run gen-data first")
            with open(path) as fh:
                doc = json.load(fh)
            config = ExperimentConfig.from_dict(doc["config"])
            gt_config = doc["gt_system"]
            train[param] = TrainingSet(np.asarray(doc["train_inputs"]),
                                       np.asarray(doc["train_targets"]))
            test_states[param] = [np.asarray(a) for a in doc["test_states"]]
            reference = [np.asarray(a) for a in doc["test_reference"]]
        config = replace(config, parameterizations=tuple(parameterizations))
        return cls(config, gt_config, train, test_states, reference)


def _energy_jump(tr) -> float:
    return float(np.max(np.diff(tr.energies), initial=0.0))


def _ground_truth_trajectory(gt_min: MechSystem, config: ExperimentConfig,
                             traj_index: int):
    """One fine-integrated trajectory as coarse discrete states.

    Returns minimal-coordinate positions Q (n_states + 1 rows, the extra
    row closing the last difference quotient) and discrete velocities
    Qd[k] = (Q[k+1] - Q[k]) / coarse_dt (n_states rows).  Discrete
    velocities are the variational integrator's own notion of state
    velocity: with them, position updates reproduce ground truth exactly
    and constrained targets satisfy the discrete constraint by
    construction.
    """
    n_fine = config.n_coarse_states * config.substeps
    for attempt in range(_MAX_TRAJECTORY_ATTEMPTS):
        rng = child_rng(config.seed, "init", config.system, traj_index, attempt)
        state = random_initial_state(gt_min, rng)
        try:
            tr = rollout(gt_min, state, config.fine_dt, n_fine,
                         method="symplectic_euler")
        except (SolverError, np.linalg.LinAlgError):
            continue
        if gt_min.has_friction and _energy_jump(tr) > _ENERGY_JUMP_LIMIT:
            continue
        Q = tr.positions[::config.substeps]
        Qd = (Q[1:] - Q[:-1]) / config.coarse_dt
        return Q, Qd
    raise DatasetError(
        f"could not generate trajectory {traj_index} for {config.system}",
        trajectory=traj_index)


def generate_dataset(config: ExperimentConfig) -> Dataset:
    """Perturb the system, integrate train/test trajectories, and assemble
    per-parameterization training pairs (z_k, v_{k+1}) with observation
    noise on the training data only."""
    nominal_min = build_system(config.system, "minimal")
    if config.perturb_ground_truth:
        gt_min = perturb(nominal_min, child_rng(config.seed, "perturb", config.system))
    else:
        gt_min = nominal_min

    n_total = config.n_train_traj + config.n_test_traj
    joint_trajs = [
        _ground_truth_trajectory(gt_min, config, i) for i in range(n_total)
    ]
    train_trajs = joint_trajs[:config.n_train_traj]
    test_trajs = joint_trajs[config.n_train_traj:]

    # Reference positions depend only on link geometry, not on the
    # perturbed masses, and are shared across parameterizations.
    n_states = config.n_coarse_states
    reference = []
    for Q, _Qd in test_trajs:
        pts = np.stack([
            nominal_min.to_reference_positions(State(Q[k], np.zeros_like(Q[k])))
            for k in range(n_states + 1)
        ])
        reference.append(pts)

    train = {}
    test_states = {}
    for param in config.parameterizations:
        view = build_system(config.system, param)

        def discrete_states(Q):
            X = np.stack([view.position_from_joint_space(Q[k])
                          for k in range(n_states + 1)])
            V = (X[1:] - X[:-1]) / config.coarse_dt
            return np.hstack([X[:-1], V])

        inputs = []
        targets = []
        for i, (Q, _Qd) in enumerate(train_trajs):
            Z = discrete_states(Q)
            rng = child_rng(config.seed, "noise", config.system, param, i)
            Z = Z + config.noise_sigma * rng.standard_normal(Z.shape)
            inputs.append(Z[:-1])
            targets.append(Z[1:, view.dim_x:])
        train[param] = TrainingSet(np.concatenate(inputs), np.concatenate(targets))
        test_states[param] = [discrete_states(Q) for Q, _Qd in test_trajs]
    return Dataset(config, gt_min.config_dict(), train, test_states, reference)


def subsample_training(full: TrainingSet, size: int, rng) -> TrainingSet:
    """Uniform subset without replacement, kept in temporal order."""
    if size > full.n:
        raise InputError(f"requested {size} rows from a pool of {full.n}")
    idx = np.sort(rng.choice(full.n, size=size, replace=False))
    return TrainingSet(full.inputs[idx], full.targets[idx])


def evaluate_multistep(step_fn, view: MechSystem, test_states, test_reference,
                       horizon: int = 20, stride: int | None = None):
    """Roll ``step_fn`` over every test window and score reference-position
    errors against ground truth.

    Returns ``(final_errors, averaged_errors, failures)``: mean-square
    position error at the final step and averaged over the horizon, one
    entry per window; windows whose solver fails are excluded and counted.
    """
    if horizon < 1:
        raise InputError("horizon must be at least 1")
    stride = horizon if stride is None else stride
    final_errors = []
    avg_errors = []
    failures = 0
    for Z, ref in zip(test_states, test_reference):
        n_states = Z.shape[0]
        for s in range(0, n_states - horizon, stride):
            state = State.from_z(Z[s])
            try:
                step_mses = []
                for j in range(1, horizon + 1):
                    state = step_fn(state)
                    pts = view.to_reference_positions(state)
                    step_mses.append(float(np.mean((pts - ref[s + j]) ** 2)))
                final_errors.append(step_mses[-1])
                avg_errors.append(float(np.mean(step_mses)))
            except (SolverError, SympgpError, np.linalg.LinAlgError):
                failures += 1
    return np.asarray(final_errors), np.asarray(avg_errors), failures


@dataclass
class EvaluationSummary:
    """Rows of (n_samples, variant, median_mse, p10, p90, failures)."""

    rows: list = field(default_factory=list)

    def add(self, n_samples, variant, errors, failures):
        errors = np.asarray(errors, dtype=float)
        if errors.size == 0:
            med = p10 = p90 = float("nan")
        else:
            med = float(np.median(errors))
            p10 = float(np.percentile(errors, 10))
            p90 = float(np.percentile(errors, 90))
        self.rows.append({"n_samples": int(n_samples), "variant": str(variant),
                          "median_mse": med, "p10": p10, "p90": p90,
                          "failures": int(failures)})

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["variant"], r["n_samples"]))

    def lookup(self, variant, n_samples):
        for r in self.rows:
            if r["variant"] == variant and r["n_samples"] == n_samples:
                return r
        raise KeyError((variant, n_samples))

    def write_csv(self, path):
        write_csv_atomic(path, SUMMARY_COLUMNS,
                         [[r[c] for c in SUMMARY_COLUMNS] for r in self.sorted_rows()])


# ---------------------------------------------------------------------- #
# prediction sweep
# ---------------------------------------------------------------------- #

def _fit_seed(config: ExperimentConfig, *tags) -> int:
    return int(child_rng(config.seed, "fit-seed", *tags).integers(2 ** 31))


def _sweep_task(payload):
    """One (parameterization, size, repetition) fit-and-evaluate job.

    Module-level so process pools can import it; returns plain arrays for
    deterministic reduction by the caller.
    """
    (config, param, size, rep, train_set, test_states, reference,
     prior_mean) = payload
    view = build_system(config.system, param)
    rng = child_rng(config.seed, "subsample", config.system, param, size, rep)
    subset = subsample_training(train_set, size, rng)
    model = train(view, subset, config.coarse_dt, config.restarts,
                  _fit_seed(config, config.system, param, size, rep),
                  prior_mean=prior_mean)
    final, avg, failures = evaluate_multistep(
        lambda s: step_gp(model, s), view, test_states, reference,
        horizon=config.horizon)
    return (param, size, rep), final, avg, failures


def _run_tasks(payloads, jobs):
    if jobs <= 1 or len(payloads) <= 1:
        return [_sweep_task(p) for p in payloads]
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs)(delayed(_sweep_task)(p) for p in payloads)


def run_prediction_sweep(dataset: Dataset, jobs: int = 1,
                         prior_mean: str | None = None):
    """Fit/evaluate every (parameterization, size, repetition) combination
    plus the nominal-only baseline; errors are pooled across repetitions.

    Returns ``(summary_final, summary_averaged)``.
    """
    config = dataset.config
    prior = prior_mean or config.resolved_prior_mean()

    payloads = []
    for param in config.parameterizations:
        for size in config.sizes:
            for rep in range(config.repetitions):
                payloads.append((config, param, size, rep, dataset.train[param],
                                 dataset.test_states[param], dataset.test_reference,
                                 prior))
    results = _run_tasks(payloads, jobs)
    results.sort(key=lambda r: (r[0][0], r[0][1], r[0][2]))

    pooled_final = {}
    pooled_avg = {}
    pooled_failures = {}
    for (param, size, _rep), final, avg, failures in results:
        key = (param, size)
        pooled_final.setdefault(key, []).append(final)
        pooled_avg.setdefault(key, []).append(avg)
        pooled_failures[key] = pooled_failures.get(key, 0) + failures

    # Nominal-only baseline: the unlearned variational integrator, one
    # series, a single reference curve (minimal coordinates when
    # available, otherwise the first requested parameterization).
    base_param = ("minimal" if "minimal" in dataset.test_states
                  else config.parameterizations[0])
    nominal_view = build_system(config.system, base_param)
    cfg_solver = SolverConfig()
    nom_final, nom_avg, nom_failures = evaluate_multistep(
        lambda s: step_nominal(nominal_view, s, config.coarse_dt, cfg_solver).next_state,
        nominal_view, dataset.test_states[base_param], dataset.test_reference,
        horizon=config.horizon)

    summary_final = EvaluationSummary()
    summary_avg = EvaluationSummary()
    summary_final.add(0, "nominal", nom_final, nom_failures)
    summary_avg.add(0, "nominal", nom_avg, nom_failures)
    for (param, size) in sorted(pooled_final):
        summary_final.add(size, param, np.concatenate(pooled_final[(param, size)]),
                          pooled_failures[(param, size)])
        summary_avg.add(size, param, np.concatenate(pooled_avg[(param, size)]),
                        pooled_failures[(param, size)])
    return summary_final, summary_avg


# ---------------------------------------------------------------------- #
# energy / drift experiments
# ---------------------------------------------------------------------- #

def _record_single_trajectory(system: MechSystem, config: ExperimentConfig,
                              view: MechSystem):
    """One conservative fine-integrated trajectory seen through ``view`` as
    discrete coarse states."""
    Q, _Qd = _ground_truth_trajectory(system, config, 0)
    X = np.stack([view.position_from_joint_space(Q[k])
                  for k in range(Q.shape[0])])
    V = (X[1:] - X[:-1]) / config.coarse_dt
    return np.hstack([X[:-1], V])


def run_energy_experiment(seed: int = 0, rollout_seconds: float = 10.0,
                          sizes=(10, 20), restarts: int = 20,
                          out_path=None):
    """Energy-error comparison on the conservative single pendulum.

    Trains constant-mean GP integrators in maximal coordinates (no prior
    dynamics knowledge) on one recorded two-second trajectory, then rolls
    them out against explicit Euler and the nominal variational integrator.
    Returns a dict of |E(t) - E(0)| series keyed like ENERGY_COLUMNS.
    """
    config = ExperimentConfig(system="pendulum", parameterizations=("maximal",),
                              n_train_traj=1, n_test_traj=0,
                              perturb_ground_truth=False, noise_sigma=0.0,
                              restarts=restarts, seed=seed)
    gt_min = build_system("pendulum", "minimal")
    view = build_system("pendulum", "maximal")
    Z = _record_single_trajectory(gt_min, config, view)
    pairs = TrainingSet(Z[:-1], Z[1:, view.dim_x:])
    start = State.from_z(Z[0])

    n_steps = round(rollout_seconds / config.coarse_dt)
    series = {}
    tr = rollout(view, start, config.coarse_dt, n_steps, method="explicit_euler")
    series["explicit_euler"] = np.abs(tr.energies - tr.energies[0])
    tr = rollout(view, start, config.coarse_dt, n_steps, method="nominal")
    series["nominal_vi"] = np.abs(tr.energies - tr.energies[0])
    for size in sizes:
        sub = subsample_training(pairs, size,
                                 child_rng(seed, "energy-sub", size))
        model = train(view, sub, config.coarse_dt, restarts,
                      _fit_seed(config, "energy", size), prior_mean="constant")
        tr = rollout(view, start, config.coarse_dt, n_steps,
                     step_fn=lambda s: step_gp(model, s), project_initial=True)
        series[f"gpvi_n{size}"] = np.abs(tr.energies - tr.energies[0])
    times = np.arange(n_steps + 1) * config.coarse_dt

    if out_path is not None:
        cols = ["t"] + list(series)
        rows = [[float(times[k])] + [float(series[c][k]) for c in series]
                for k in range(times.size)]
        write_csv_atomic(out_path, cols, rows)
    return times, series


def run_drift_experiment(seed: int = 0, rollout_seconds: float = 10.0,
                         train_size: int = 20, restarts: int = 20,
                         out_path=None):
    """Constraint-drift comparison on the maximal-coordinate double
    pendulum: explicit Euler versus the trained projected integrator.
    Returns infinity-norm constraint-violation series keyed like
    DRIFT_COLUMNS."""
    config = ExperimentConfig(system="double_pendulum",
                              parameterizations=("maximal",),
                              n_train_traj=1, n_test_traj=0,
                              perturb_ground_truth=False, noise_sigma=0.0,
                              restarts=restarts, seed=seed)
    gt_min = build_system("double_pendulum", "minimal")
    view = build_system("double_pendulum", "maximal")
    Z = _record_single_trajectory(gt_min, config, view)
    pairs = TrainingSet(Z[:-1], Z[1:, view.dim_x:])
    start = State.from_z(Z[0])

    n_steps = round(rollout_seconds / config.coarse_dt)
    series = {}
    tr = rollout(view, start, config.coarse_dt, n_steps, method="explicit_euler")
    series["explicit_euler"] = tr.constraint_norms.copy()
    sub = subsample_training(pairs, train_size, child_rng(seed, "drift-sub"))
    model = train(view, sub, config.coarse_dt, restarts,
                  _fit_seed(config, "drift", train_size), prior_mean="constant")
    tr = rollout(view, start, config.coarse_dt, n_steps,
                 step_fn=lambda s: step_gp(model, s), project_initial=True)
    series["gpvi_projected"] = tr.constraint_norms.copy()
    times = np.arange(n_steps + 1) * config.coarse_dt

    if out_path is not None:
        cols = ["t"] + list(series)
        rows = [[float(times[k])] + [float(series[c][k]) for c in series]
                for k in range(times.size)]
        write_csv_atomic(out_path, cols, rows)
    return times, series


# ---------------------------------------------------------------------- #
# uncertainty bound
# ---------------------------------------------------------------------- #

def collect_test_states(dataset: Dataset, param: str, count: int, seed: int):
    """Deterministic draw of ``count`` coarse test states in ``param``."""
    Zs = dataset.test_states[param]
    all_states = np.concatenate(Zs, axis=0)
    rng = child_rng(seed, "state-pick", param, count)
    idx = np.sort(rng.choice(all_states.shape[0], size=min(count, all_states.shape[0]),
                             replace=False))
    return all_states[idx]

def run_bound_experiment(dataset: Dataset, param: str = "maximal",
                         train_size: int = 64, delta: float = 0.05,
                         n_cal_states: int = 100, cal_draws: int = 2000,
                         n_test_states: int = 500, test_draws: int = 10000,
                         jobs: int = 1, out_path=None) -> dict:
    """Estimate L, calibrate beta at confidence delta, and measure the
    Monte-Carlo violation rate of the one-step bound on held-out states."""
    config = dataset.config
    view = build_system(config.system, param)
    rng = child_rng(config.seed, "bound-sub", param, train_size)
    subset = subsample_training(dataset.train[param], train_size, rng)
    model = train(view, subset, config.coarse_dt, config.restarts,
                  _fit_seed(config, "bound", param, train_size),
                  prior_mean=config.resolved_prior_mean())

    states = collect_test_states(dataset, param, n_cal_states + n_test_states,
                                 config.seed)
    # exchangeable calibration/evaluation split
    perm = child_rng(config.seed, "bound-split", param).permutation(len(states))
    cal_states = states[perm[:n_cal_states]]
    test_states = states[perm[n_cal_states:]]
    # probe the projection at recorded states: the region of interest for
    # the bound is where rollouts live, and strongly constrained systems
    # have no feasible box neighborhoods to sample instead
    L = estimate_lipschitz(model, samples=25, seed=config.seed,
                           states=cal_states)
    beta = calibrate_beta(model, cal_states, L, delta=delta, draws=cal_draws,
                          seed=config.seed)
    bound = UncertaintyBound(lipschitz_L=L, beta=beta, delta=delta)
    rate, skipped = bound_violation_rate(model, test_states, bound,
                                         draws=test_draws,
                                         seed=config.seed + 1,
                                         return_skipped=True)
    report = {"system": config.system, "parameterization": param,
              "train_size": train_size, "lipschitz_L": L, "beta": beta,
              "gamma": bound.gamma, "delta": delta,
              "violation_rate": rate, "n_test_states": int(len(test_states)),
              "skipped_states": int(skipped), "draws": test_draws}
    if out_path is not None:
        write_json_atomic(out_path, report)
    return report
