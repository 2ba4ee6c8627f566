"""Dataset assembly, subsampling, evaluation, and experiment pipelines."""

import json
import os

import numpy as np
import pytest

from sympgp.errors import InputError
from sympgp.harness import (DRIFT_COLUMNS, ENERGY_COLUMNS, SUMMARY_COLUMNS,
                            Dataset, EvaluationSummary, ExperimentConfig,
                            collect_test_states, evaluate_multistep,
                            generate_dataset, run_drift_experiment,
                            run_energy_experiment, run_prediction_sweep,
                            subsample_training)
from sympgp.gp import TrainingSet
from sympgp.integrators import step_nominal
from sympgp.rng import child_rng
from sympgp.systems import State, build_system

TINY = ExperimentConfig(system="pendulum", n_train_traj=2, n_test_traj=2,
                        sizes=(8, 16), repetitions=1, restarts=2, seed=3)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_dataset(TINY)


class TestConfig:
    def test_coarse_dt_must_be_multiple(self):
        with pytest.raises(InputError):
            ExperimentConfig(coarse_dt=1.05e-4, fine_dt=1e-4)

    def test_round_trip(self):
        cfg = ExperimentConfig(system="cartpole", sizes=(4, 8))
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_auto_prior_assignment(self):
        assert ExperimentConfig(system="pendulum").resolved_prior_mean() == "nominal"
        assert ExperimentConfig(system="cartpole").resolved_prior_mean() == "nominal"
        assert ExperimentConfig(system="double_pendulum").resolved_prior_mean() \
            == "constant"
        assert ExperimentConfig(system="fourbar").resolved_prior_mean() == "constant"


class TestGenerateDataset:
    def test_pair_count_per_trajectory(self, tiny_dataset):
        # 2 s at 10 ms: 200 coarse states, consecutive pairing -> 199 pairs
        pairs = tiny_dataset.train["minimal"].n
        assert pairs == TINY.n_train_traj * 199

    def test_deterministic_bytes(self, tmp_path):
        d1 = generate_dataset(TINY)
        d2 = generate_dataset(TINY)
        d1.save(tmp_path / "a")
        d2.save(tmp_path / "b")
        for param in TINY.parameterizations:
            fa = tmp_path / "a" / "data" / "pendulum" / param / "dataset.json"
            fb = tmp_path / "b" / "data" / "pendulum" / param / "dataset.json"
            assert fa.read_bytes() == fb.read_bytes()

    def test_noiseless_unperturbed_targets_match_nominal(self):
        cfg = ExperimentConfig(system="pendulum", n_train_traj=1, n_test_traj=1,
                               noise_sigma=0.0, perturb_ground_truth=False,
                               seed=1)
        ds = generate_dataset(cfg)
        s = build_system("pendulum", "minimal")
        ts = ds.train["minimal"]
        worst = 0.0
        for i in range(0, ts.n, 23):
            st = State.from_z(ts.inputs[i])
            pred = step_nominal(s, st, cfg.coarse_dt).next_state.v
            worst = max(worst, float(np.max(np.abs(pred - ts.targets[i]))))
        assert worst <= 1e-3

    def test_discrete_states_reproduce_positions(self, tiny_dataset):
        # z_{k+1} position equals z_k position + v_k dt by construction
        for param in TINY.parameterizations:
            view = build_system("pendulum", param)
            Z = tiny_dataset.test_states[param][0]
            n = view.dim_x
            step = Z[:-1, :n] + Z[:-1, n:] * TINY.coarse_dt
            assert np.max(np.abs(step - Z[1:, :n])) < 1e-12

    def test_constrained_targets_satisfy_discrete_constraint(self, tiny_dataset):
        view = build_system("pendulum", "maximal")
        Z = tiny_dataset.test_states["maximal"][0]
        n = view.dim_x
        worst = 0.0
        for k in range(0, Z.shape[0] - 1, 17):
            x2 = Z[k, :n] + Z[k, n:] * TINY.coarse_dt
            worst = max(worst, float(np.max(np.abs(view.constraints.g(x2)))))
        assert worst <= 1e-9

    def test_save_load_round_trip(self, tiny_dataset, tmp_path):
        tiny_dataset.save(tmp_path)
        loaded = Dataset.load(tmp_path, "pendulum", TINY.parameterizations)
        for param in TINY.parameterizations:
            assert np.array_equal(loaded.train[param].inputs,
                                  tiny_dataset.train[param].inputs)
        assert loaded.config == tiny_dataset.config

    def test_load_missing_raises_filenotfound(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            Dataset.load(tmp_path, "pendulum", ("minimal",))

    def test_fourbar_ground_truth_is_dissipative(self):
        # friction removes energy; branch-switch blow-ups are filtered out
        cfg = ExperimentConfig(system="fourbar", n_train_traj=1, n_test_traj=1,
                               parameterizations=("minimal",), seed=2)
        ds = generate_dataset(cfg)
        from sympgp.systems import MechSystem
        gt = MechSystem.from_config(ds.gt_config)
        Z = ds.test_states["minimal"][0]
        E = np.array([gt.energy(State.from_z(z)) for z in Z])
        assert np.max(np.diff(E), initial=0.0) <= 0.06


class TestSubsample:
    def test_full_size_is_identity(self, tiny_dataset):
        full = tiny_dataset.train["minimal"]
        sub = subsample_training(full, full.n, child_rng(0, "sub"))
        assert np.array_equal(sub.inputs, full.inputs)

    def test_single_row_from_source(self, tiny_dataset):
        full = tiny_dataset.train["minimal"]
        sub = subsample_training(full, 1, child_rng(1, "sub1"))
        assert any(np.array_equal(sub.inputs[0], row) for row in full.inputs)

    def test_too_large_rejected(self, tiny_dataset):
        full = tiny_dataset.train["minimal"]
        with pytest.raises(InputError):
            subsample_training(full, full.n + 1, child_rng(2, "sub2"))

    def test_overlap_near_hypergeometric(self):
        pool = TrainingSet(np.arange(400, dtype=float)[:, None],
                           np.zeros((400, 1)))
        n = 80
        overlaps = []
        for seed in range(40):
            a = subsample_training(pool, n, child_rng(seed, "ova"))
            b = subsample_training(pool, n, child_rng(seed, "ovb"))
            overlaps.append(len(set(a.inputs[:, 0]) & set(b.inputs[:, 0])))
        # E[overlap] = n^2 / N = 16; sd ~ 3.4
        assert abs(np.mean(overlaps) - 16.0) < 3.0


class TestEvaluate:
    def test_ground_truth_replay_scores_zero(self, tiny_dataset):
        view = build_system("pendulum", "minimal")
        Z = tiny_dataset.test_states["minimal"]

        class Replay:
            """Oracle stepper: looks up the recorded next state."""

            def __init__(self):
                self.table = {}
                for traj in Z:
                    for k in range(traj.shape[0] - 1):
                        self.table[traj[k].tobytes()] = traj[k + 1]

            def __call__(self, state):
                nxt = self.table[state.z.tobytes()]
                return State.from_z(nxt)

        final, avg, failures = evaluate_multistep(
            Replay(), view, Z, tiny_dataset.test_reference, horizon=20)
        assert failures == 0
        assert np.max(final) < 1e-20
        assert np.max(avg) < 1e-20

    def test_failures_counted_not_raised(self, tiny_dataset):
        view = build_system("pendulum", "minimal")

        def broken(state):
            from sympgp.errors import SolverError
            raise SolverError("boom")

        final, avg, failures = evaluate_multistep(
            broken, view, tiny_dataset.test_states["minimal"],
            tiny_dataset.test_reference, horizon=20)
        assert final.size == 0
        assert failures > 0

    def test_percentile_ordering(self):
        summary = EvaluationSummary()
        errs = np.abs(child_rng(3, "perc").standard_normal(200))
        summary.add(16, "minimal", errs, 0)
        row = summary.rows[0]
        assert row["p10"] <= row["median_mse"] <= row["p90"]


class TestSweep:
    def test_summary_schema_and_determinism(self, tiny_dataset, tmp_path):
        s1, a1 = run_prediction_sweep(tiny_dataset, jobs=1)
        s2, a2 = run_prediction_sweep(tiny_dataset, jobs=2)
        p1, p2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        s1.write_csv(p1)
        s2.write_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()   # job count independent
        header = p1.read_text().splitlines()[0].split(",")
        assert header == list(SUMMARY_COLUMNS)
        variants = {r["variant"] for r in s1.rows}
        assert variants == {"nominal", "minimal", "sincos", "maximal"}

    def test_trained_beats_nominal_on_tiny_config(self, tiny_dataset):
        s_final, _ = run_prediction_sweep(tiny_dataset, jobs=1)
        nominal = s_final.lookup("nominal", 0)["median_mse"]
        best = min(s_final.lookup(p, 16)["median_mse"]
                   for p in TINY.parameterizations)
        assert best < nominal


class TestEnergyDrift:
    def test_energy_series_shapes_and_zero_start(self, tmp_path):
        out = tmp_path / "energy.csv"
        times, series = run_energy_experiment(seed=1, rollout_seconds=1.0,
                                              sizes=(10, 20), restarts=3,
                                              out_path=out)
        assert set(series) == set(ENERGY_COLUMNS[1:])
        for s in series.values():
            assert s[0] == 0.0
            assert s.shape == times.shape
        header = out.read_text().splitlines()[0].split(",")
        assert header == list(ENERGY_COLUMNS)

    def test_more_samples_plateau_lower(self):
        # the N=20 energy-error band settles below the N=10 band
        times, series = run_energy_experiment(seed=0, rollout_seconds=5.0,
                                              sizes=(10, 20), restarts=10)
        mask = (times >= 3.0) & (times <= 5.0)
        lvl10 = float(np.mean(series["gpvi_n10"][mask]))
        lvl20 = float(np.mean(series["gpvi_n20"][mask]))
        assert lvl20 < lvl10

    def test_drift_series(self, tmp_path):
        out = tmp_path / "drift.csv"
        times, series = run_drift_experiment(seed=1, rollout_seconds=1.0,
                                             train_size=15, restarts=3,
                                             out_path=out)
        assert set(series) == set(DRIFT_COLUMNS[1:])
        assert series["gpvi_projected"].max() <= 1e-8
        assert series["explicit_euler"].max() > series["gpvi_projected"].max()
        header = out.read_text().splitlines()[0].split(",")
        assert header == list(DRIFT_COLUMNS)
        # both start from the (projected) feasible ground-truth state
        assert series["explicit_euler"][0] <= 1e-9


class TestCollectStates:
    def test_deterministic_and_sized(self, tiny_dataset):
        a = collect_test_states(tiny_dataset, "minimal", 50, 7)
        b = collect_test_states(tiny_dataset, "minimal", 50, 7)
        assert np.array_equal(a, b)
        assert a.shape == (50, 2 * 1)
