"""Variational integrator and baseline tests against independent oracles."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import bisect

from sympgp.errors import SolverError
from sympgp.integrators import (SolverConfig, Trajectory, _acceleration,
                                d0_residual, discrete_velocity,
                                discretely_consistent_velocity,
                                explicit_euler_step, rollout, step_nominal,
                                step_nominal_constrained,
                                step_nominal_unconstrained,
                                symplectic_euler_step, write_trajectory_csv)
from sympgp.rng import child_rng
from sympgp.solvers import newton_solve
from sympgp.systems import (KINDS, PARAMETERIZATIONS, State, build_system,
                            perturb, random_initial_state)

DT = 0.01
ALL_PAIRS = [(k, p) for k in KINDS for p in PARAMETERIZATIONS]


def fd_action_gradient(system, x0, x1, x2, dt, h=1e-6):
    """Oracle: minus the central-difference gradient of the discrete action
    S_d = sum_k L(x_k, (x_{k+1} - x_k)/dt) dt with respect to the middle
    stencil point."""
    def action(x1v):
        va = (x1v - x0) / dt
        vb = (x2 - x1v) / dt
        return (system.lagrangian(x0, va) + system.lagrangian(x1v, vb)) * dt

    grad = np.zeros_like(x1)
    for j in range(x1.size):
        xp = x1.copy(); xp[j] += h
        xm = x1.copy(); xm[j] -= h
        grad[j] = (action(xp) - action(xm)) / (2 * h)
    return -grad


class TestDiscreteVelocity:
    def test_no_motion(self):
        x = np.array([1.0, -2.0])
        assert np.array_equal(discrete_velocity(x, x, 0.1), np.zeros(2))

    def test_linear_ratio(self):
        assert discrete_velocity(np.array([0.0]), np.array([0.01]), 0.01)[0] \
            == pytest.approx(1.0)

    def test_random_triples(self):
        rng = child_rng(0, "dv")
        for _ in range(10):
            a, b = rng.standard_normal((2, 3))
            dt = float(rng.uniform(0.001, 0.1))
            assert discrete_velocity(a, b, dt) == pytest.approx((b - a) / dt)


class TestD0Residual:
    def test_zero_at_stable_equilibrium(self):
        s = build_system("pendulum", "minimal")
        x1 = np.array([0.0])
        res = d0_residual(s, x1, np.zeros(1), np.zeros(1), DT)
        assert np.max(np.abs(res)) < 1e-14

    def test_free_particle_reduces_to_momentum_difference(self):
        # gravity off: residual is exactly M (v1 - v0)
        from dataclasses import replace
        s = build_system("pendulum", "maximal")
        s = build_system("pendulum", "maximal",
                         replace(s.params, gravity=0.0))
        rng = child_rng(1, "free")
        v0, v1 = rng.standard_normal((2, 3))
        x1 = rng.standard_normal(3)
        res = d0_residual(s, x1, v0, v1, DT)
        assert res == pytest.approx(s.mass_matrix(x1) @ (v1 - v0), abs=1e-12)

    @pytest.mark.parametrize("kind,param", ALL_PAIRS)
    def test_matches_discrete_action_gradient(self, kind, param):
        s = build_system(kind, param)
        rng = child_rng(2, "d0", kind, param)
        worst = 0.0
        for _ in range(20):
            st = random_initial_state(s, rng)
            v0 = rng.uniform(-1, 1, s.dim_x)
            v1 = rng.uniform(-1, 1, s.dim_x)
            x1 = st.x + v0 * DT
            fd = fd_action_gradient(s, st.x, x1, x1 + v1 * DT, DT)
            d0 = d0_residual(s, x1, v0, v1, DT)
            worst = max(worst, float(np.max(np.abs(d0 - fd))
                                     / max(np.max(np.abs(fd)), 1e-9)))
        assert worst < 1e-6


class TestNominalUnconstrained:
    def test_equilibrium_is_fixed_point(self):
        s = build_system("pendulum", "minimal")
        st = State(np.zeros(1), np.zeros(1))
        out = step_nominal_unconstrained(s, st, DT)
        assert out.next_state.x == pytest.approx([0.0])
        assert out.next_state.v == pytest.approx([0.0])

    def test_matches_scalar_bisection_oracle(self):
        s = build_system("pendulum", "minimal")
        st = State(np.array([np.pi / 2]), np.array([0.0]))
        out = step_nominal_unconstrained(s, st, DT)
        x1 = st.x + st.v * DT

        def residual(v1):
            return d0_residual(s, x1, st.v, np.array([v1]), DT)[0]

        v_oracle = bisect(residual, -10.0, 10.0, xtol=1e-13)
        assert out.next_state.v[0] == pytest.approx(v_oracle, abs=1e-12)

    def test_energy_band_vs_euler_growth(self):
        s = build_system("pendulum", "minimal")
        st = State(np.array([1.5]), np.array([0.0]))
        vi = rollout(s, st, DT, 1000)
        eu = rollout(s, st, DT, 1000, method="explicit_euler")
        vi_err = np.abs(vi.energies - vi.energies[0])
        eu_err = np.abs(eu.energies - eu.energies[0])
        band_1s = vi_err[:101].max()
        assert vi_err.max() <= 2 * band_1s
        assert eu_err[-1] >= 5 * eu_err[100]

    def test_no_secular_energy_trend(self):
        s = build_system("pendulum", "minimal")
        st = State(np.array([1.5]), np.array([0.0]))
        tr = rollout(s, st, DT, 1000)
        err = np.abs(tr.energies - tr.energies[0])
        slope = np.polyfit(tr.times, err, 1)[0]
        band = err.max()
        assert abs(slope) * tr.times[-1] < 0.5 * band


class TestNominalConstrained:
    def test_equilibrium_multiplier_matches_static_pin_impulse(self):
        # hanging maximal pendulum: lam equals the pin force times dt
        s = build_system("pendulum", "maximal")
        st = s.state_from_joint_space(np.zeros(1), np.zeros(1))
        out = step_nominal_constrained(s, st, DT)
        assert np.max(np.abs(out.next_state.v)) < 1e-12
        g = s.params.gravity
        m = s.params.masses[0]
        assert out.multipliers == pytest.approx([0.0, m * g * DT], abs=1e-10)

    def test_cross_parameterization_trajectories_agree(self):
        smin = build_system("pendulum", "minimal")
        smax = build_system("pendulum", "maximal")
        q, qd = smin.sample_joint_space(child_rng(3, "cross"))
        t1 = rollout(smin, smin.state_from_joint_space(q, qd), DT, 200)
        t2 = rollout(smax, smax.state_from_joint_space(q, qd), DT, 200)
        p1 = smin.to_reference_positions(t1.state(200))
        p2 = smax.to_reference_positions(t2.state(200))
        assert np.max(np.abs(p1 - p2)) < 1e-3

    def test_double_pendulum_long_run_no_drift(self):
        s = build_system("double_pendulum", "maximal")
        st = random_initial_state(s, child_rng(4, "drift"))
        tr = rollout(s, st, DT, 1000)
        assert tr.constraint_norms.max() <= 1e-8

    @pytest.mark.parametrize("kind,param", [(k, p) for k, p in ALL_PAIRS
                                            if build_system(k, p).is_constrained])
    def test_short_rollouts_feasible_everywhere(self, kind, param):
        s = build_system(kind, param)
        st = random_initial_state(s, child_rng(5, "feas", kind, param))
        tr = rollout(s, st, DT, 50)
        assert tr.constraint_norms.max() <= 1e-8


class TestExplicitEuler:
    def test_free_particle_exact(self):
        from dataclasses import replace
        s = build_system("pendulum", "minimal")
        s = build_system("pendulum", "minimal", replace(s.params, gravity=0.0))
        st = State(np.array([0.3]), np.array([2.0]))
        out = explicit_euler_step(s, st, DT)
        assert out.x[0] == pytest.approx(0.3 + 2.0 * DT)
        assert out.v[0] == pytest.approx(2.0)

    def test_acceleration_matches_rk45_energy_conservation(self):
        # independent check of the acceleration assembly: integrating it
        # with a high-order method conserves energy to tight tolerance
        s = build_system("double_pendulum", "minimal")
        st = random_initial_state(s, child_rng(6, "rk45"))

        def f(t, y):
            return np.concatenate([y[2:], _acceleration(s, y[:2], y[2:])])

        sol = solve_ivp(f, (0, 1.0), st.z, rtol=1e-11, atol=1e-12)
        end = State(sol.y[:2, -1], sol.y[2:, -1])
        assert abs(s.energy(end) - s.energy(st)) < 1e-8

    def test_constraint_drift_grows(self):
        s = build_system("double_pendulum", "maximal")
        st = random_initial_state(s, child_rng(7, "edrift"))
        tr = rollout(s, st, DT, 1000)
        eu = rollout(s, st, DT, 1000, method="explicit_euler")
        assert eu.constraint_norms.max() >= 1e-4
        assert eu.constraint_norms.max() > 100 * tr.constraint_norms.max()


class TestSymplecticEuler:
    def test_moderate_pendulum_energy_drift_small(self):
        s = build_system("pendulum", "minimal")
        st = State(np.array([0.4]), np.array([0.0]))
        tr = rollout(s, st, 1e-4, 20000, method="symplectic_euler")
        assert np.abs(tr.energies - tr.energies[0]).max() <= 1e-4

    @pytest.mark.parametrize("kind", KINDS)
    def test_first_order_energy_convergence(self, kind):
        # halving dt halves the energy error: validates consistency of the
        # acceleration with the energy function for every system
        s = build_system(kind, "minimal")
        q, qd = s.sample_joint_space(child_rng(8, "conv", kind))
        st = s.state_from_joint_space(0.5 * q, 0.5 * qd)
        e = []
        for dt, n in ((2e-4, 2500), (1e-4, 5000)):
            tr = rollout(s, st, dt, n, method="symplectic_euler")
            e.append(np.abs(tr.energies - tr.energies[0]).max())
        assert e[1] < 0.65 * e[0]

    def test_friction_dissipates_monotonically(self):
        nominal = build_system("pendulum", "minimal")
        g = perturb(nominal, child_rng(9, "fric"))
        assert g.has_friction
        st = State(np.array([2.0]), np.array([0.5]))
        tr = rollout(g, st, 1e-3, 3000, method="symplectic_euler")
        diffs = np.diff(tr.energies)
        assert np.all(diffs <= 1e-10)

    def test_deterministic(self):
        s = build_system("cartpole", "minimal")
        st = random_initial_state(s, child_rng(10, "sdet"))
        t1 = rollout(s, st, 1e-3, 500, method="symplectic_euler")
        t2 = rollout(s, st, 1e-3, 500, method="symplectic_euler")
        assert np.array_equal(t1.positions, t2.positions)

    def test_constrained_stays_on_manifold(self):
        s = build_system("fourbar", "minimal")
        q, qd = s.sample_joint_space(child_rng(11, "fbgt"))
        st = s.state_from_joint_space(q, qd)
        tr = rollout(s, st, 1e-4, 2000, method="symplectic_euler")
        assert tr.constraint_norms.max() <= 1e-9


class TestDiscretelyConsistentVelocity:
    def test_projected_initial_velocity_keeps_positions_feasible(self):
        s = build_system("double_pendulum", "maximal")
        st = random_initial_state(s, child_rng(12, "dcv"))
        adj = discretely_consistent_velocity(s, st, DT)
        assert np.max(np.abs(s.constraints.g(adj.x + adj.v * DT))) <= 1e-10
        # adjustment is O(dt^2 curvature), small against the velocity scale
        assert np.max(np.abs(adj.v - st.v)) < 0.05


class TestNewtonBehavior:
    def test_quadratic_local_convergence(self):
        s = build_system("double_pendulum", "minimal")
        st = random_initial_state(s, child_rng(13, "newton"))
        x1 = st.x + st.v * DT
        res = lambda v1: d0_residual(s, x1, st.v, v1, DT)
        from sympgp.integrators import _d0_jacobian
        jac = lambda v1: _d0_jacobian(s, x1, v1, DT)
        _, info = newton_solve(res, jac, st.v + 0.5)
        hist = info.residual_history
        assert info.converged
        # once inside the basin, each digit count roughly doubles
        tail = [h for h in hist if 1e-12 < h < 1e-2]
        for a, b in zip(tail, tail[1:]):
            assert b < a ** 1.5 * 10

    def test_solver_error_carries_history(self):
        res = lambda w: np.array([w[0] ** 2 + 1.0])   # no real root
        jac = lambda w: np.array([[2 * w[0]]])
        with pytest.raises(SolverError) as exc:
            newton_solve(res, jac, np.array([1.0]),
                         SolverConfig(max_iterations=5))
        assert len(exc.value.residual_history) >= 1


class TestTrajectoryCsv:
    def test_schema_and_round_trip(self, tmp_path):
        s = build_system("pendulum", "sincos")
        st = random_initial_state(s, child_rng(14, "csv"))
        tr = rollout(s, st, DT, 10)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, tr)
        header = path.read_text().splitlines()[0].split(",")
        assert header == ["t", "x_0", "x_1", "v_0", "v_1", "energy",
                          "constraint_norm"]
        rows = path.read_text().splitlines()[1:]
        assert len(rows) == 11
        assert float(rows[0].split(",")[-2]) == pytest.approx(tr.energies[0])
