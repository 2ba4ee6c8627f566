"""Mechanism construction, energetics, constraints, friction, sampling."""

import numpy as np
import pytest

from sympgp.errors import ConfigurationError, InputError
from sympgp.rng import child_rng
from sympgp.systems import (FRICTION_RANGES, KINDS, PARAMETERIZATIONS,
                            MechSystem, State, SystemParams, build_system,
                            default_params, energy, perturb,
                            random_initial_state, to_reference_positions)

ALL_PAIRS = [(k, p) for k in KINDS for p in PARAMETERIZATIONS]


class TestBuild:
    @pytest.mark.parametrize("kind,param,dim,ncon", [
        ("pendulum", "minimal", 1, 0),
        ("pendulum", "sincos", 2, 1),
        ("pendulum", "maximal", 3, 2),
        ("cartpole", "minimal", 2, 0),
        ("cartpole", "sincos", 3, 1),
        ("cartpole", "maximal", 6, 4),
        ("double_pendulum", "minimal", 2, 0),
        ("double_pendulum", "sincos", 4, 2),
        ("double_pendulum", "maximal", 6, 4),
        ("fourbar", "minimal", 4, 2),
        ("fourbar", "sincos", 8, 6),
        ("fourbar", "maximal", 12, 10),
    ])
    def test_dimensions_and_constraint_counts(self, kind, param, dim, ncon):
        s = build_system(kind, param)
        assert s.dim_x == dim
        assert s.n_constraints == ncon

    def test_unsupported_pairs_rejected(self):
        with pytest.raises(ConfigurationError):
            build_system("tricycle", "minimal")
        with pytest.raises(ConfigurationError):
            build_system("pendulum", "quaternion")

    def test_default_params(self):
        p = default_params("double_pendulum")
        assert np.all(p.masses == 1.0)
        assert np.all(p.lengths == 1.0)
        assert p.inertias == pytest.approx([1 / 12, 1 / 12])

    def test_param_validation(self):
        with pytest.raises(InputError):
            SystemParams(masses=[-1.0], lengths=[1.0], inertias=[0.1],
                         friction=[0.0])


class TestEnergy:
    def test_hanging_pendulum_rest_energy(self):
        # COM at l/2 below the pivot datum: E = -m g l/2 = -4.905 J
        s = build_system("pendulum", "minimal")
        st = State(np.array([0.0]), np.array([0.0]))
        assert energy(s, st) == pytest.approx(-4.905)

    def test_zero_velocity_energy_is_potential(self):
        rng = child_rng(0, "e-pot")
        for kind, param in ALL_PAIRS:
            s = build_system(kind, param)
            st = random_initial_state(s, rng)
            st = State(st.x, np.zeros_like(st.v))
            assert energy(s, st) == pytest.approx(s.potential(st.x))

    @pytest.mark.parametrize("kind", KINDS)
    def test_parameterization_invariant(self, kind):
        rng = child_rng(1, "e-par", kind)
        views = [build_system(kind, p) for p in PARAMETERIZATIONS]
        for _ in range(20):
            q, qd = views[0].sample_joint_space(rng)
            vals = [v.energy(v.state_from_joint_space(q, qd)) for v in views]
            assert np.ptp(vals) < 1e-9

    def test_mass_matrix_positive_definite(self):
        rng = child_rng(2, "e-pd")
        for kind, param in ALL_PAIRS:
            s = build_system(kind, param)
            for _ in range(5):
                st = random_initial_state(s, rng)
                eig = np.linalg.eigvalsh(s.mass_matrix(st.x))
                assert eig.min() > 0

    def test_mass_matrix_deriv_matches_fd(self):
        rng = child_rng(3, "dM")
        for kind in ("cartpole", "double_pendulum", "fourbar"):
            s = build_system(kind, "minimal")
            st = random_initial_state(s, rng)
            dM = s.mass_matrix_deriv(st.x)
            h = 1e-6
            for l in range(s.dim_x):
                xp = st.x.copy(); xp[l] += h
                xm = st.x.copy(); xm[l] -= h
                fd = (s.mass_matrix(xp) - s.mass_matrix(xm)) / (2 * h)
                assert np.max(np.abs(dM[:, :, l] - fd)) < 1e-8


class TestReferencePositions:
    def test_pendulum_geometry(self):
        s = build_system("pendulum", "minimal")
        down = s.to_reference_positions(State(np.array([0.0]), np.array([0.0])))
        assert down[0] == pytest.approx([0.0, -1.0])
        side = s.to_reference_positions(State(np.array([np.pi / 2]), np.array([0.0])))
        assert side[0] == pytest.approx([1.0, 0.0])

    @pytest.mark.parametrize("kind", KINDS)
    def test_parameterization_invariant(self, kind):
        rng = child_rng(4, "refpos", kind)
        views = [build_system(kind, p) for p in PARAMETERIZATIONS]
        for _ in range(10):
            q, qd = views[0].sample_joint_space(rng)
            pts = [v.to_reference_positions(v.state_from_joint_space(q, qd))
                   for v in views]
            assert np.max(np.abs(pts[0] - pts[1])) < 1e-9
            assert np.max(np.abs(pts[0] - pts[2])) < 1e-9

    def test_fourbar_tips_coincide(self):
        s = build_system("fourbar", "minimal")
        rng = child_rng(5, "fourbar-tips")
        st = random_initial_state(s, rng)
        pts = s.to_reference_positions(st)
        # chain A tip (index 1) equals chain B tip (index 3) by loop closure
        assert pts[1] == pytest.approx(pts[3], abs=1e-12)


class TestConstraints:
    @pytest.mark.parametrize("kind,param", [(k, p) for k, p in ALL_PAIRS
                                            if build_system(k, p).is_constrained])
    def test_jacobian_matches_finite_differences(self, kind, param):
        s = build_system(kind, param)
        rng = child_rng(6, "conjac", kind, param)
        worst = 0.0
        for _ in range(100):
            st = random_initial_state(s, rng)
            G = s.constraints.jacobian(st.x)
            h = 1e-6
            for j in range(s.dim_x):
                xp = st.x.copy(); xp[j] += h
                xm = st.x.copy(); xm[j] -= h
                fd = (s.constraints.g(xp) - s.constraints.g(xm)) / (2 * h)
                scale = max(1.0, np.max(np.abs(fd)))
                worst = max(worst, np.max(np.abs(G[:, j] - fd)) / scale)
        assert worst < 1e-6

    def test_batched_evaluation_matches_loop(self):
        s = build_system("double_pendulum", "maximal")
        rng = child_rng(7, "batch")
        X = np.stack([random_initial_state(s, rng).x for _ in range(8)])
        X += 0.01 * rng.standard_normal(X.shape)
        gb = s.constraints.g(X)
        Gb = s.constraints.jacobian(X)
        for i in range(8):
            assert np.allclose(gb[i], s.constraints.g(X[i]), atol=1e-14)
            assert np.allclose(Gb[i], s.constraints.jacobian(X[i]), atol=1e-14)


class TestRandomInitialState:
    def test_deterministic(self):
        s = build_system("cartpole", "maximal")
        a = random_initial_state(s, child_rng(8, "det"))
        b = random_initial_state(s, child_rng(8, "det"))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)

    @pytest.mark.parametrize("kind,param", [(k, p) for k, p in ALL_PAIRS
                                            if build_system(k, p).is_constrained])
    def test_constraints_satisfied(self, kind, param):
        s = build_system(kind, param)
        rng = child_rng(9, "consat", kind, param)
        worst = 0.0
        for _ in range(200):
            st = random_initial_state(s, rng)
            worst = max(worst, np.max(np.abs(s.constraints.g(st.x))))
            # velocity tangency: d/dt g = G v = 0 at construction
            worst = max(worst, np.max(np.abs(s.constraints.jacobian(st.x) @ st.v)))
        assert worst <= 1e-12

    def test_angle_coverage(self):
        s = build_system("pendulum", "minimal")
        rng = child_rng(10, "coverage")
        angles = np.array([random_initial_state(s, rng).x[0] for _ in range(1000)])
        hist, _ = np.histogram(angles, bins=20, range=(-np.pi, np.pi))
        assert np.count_nonzero(hist) == 20
        assert np.ptp(angles) > 0.95 * 2 * np.pi


class _MidpointRng:
    """Stub returning the midpoint of every requested uniform range."""

    def uniform(self, lo, hi, size=None):
        mid = (np.asarray(lo) + np.asarray(hi)) / 2.0
        if size is None:
            return float(mid)
        return np.full(size, mid, dtype=float)


class TestPerturb:
    def test_midpoint_draws_leave_masses_unity(self):
        s = build_system("pendulum", "minimal")
        g = perturb(s, _MidpointRng())
        assert g.params.masses[0] == pytest.approx(1.0)
        assert g.params.inertias[0] == pytest.approx(1 / 12)
        assert g.params.friction[0] == pytest.approx(0.5)

    def test_fourbar_friction_structure(self):
        s = build_system("fourbar", "minimal")
        g = perturb(s, child_rng(11, "fb"))
        c = g.params.friction
        assert c[3] == 0.0
        assert c[1] == c[2]
        assert 0.0 <= c[0] <= 2.0
        assert 0.0 <= c[1] <= 0.5

    def test_draw_support(self):
        s = build_system("double_pendulum", "minimal")
        rng = child_rng(12, "support")
        factors = []
        for _ in range(300):
            g = perturb(s, rng)
            factors.extend(g.params.masses / s.params.masses)
            assert 0 <= g.params.friction[0] <= 2.0
            assert 0 <= g.params.friction[1] <= 0.5
        factors = np.asarray(factors)
        assert factors.min() >= 0.9 and factors.max() <= 1.1
        assert factors.min() < 0.92 and factors.max() > 1.08

    def test_requires_nominal(self):
        s = build_system("pendulum", "minimal")
        g = perturb(s, child_rng(13, "nom"))
        if g.has_friction:
            with pytest.raises(InputError):
                perturb(g, child_rng(13, "nom2"))

    def test_deterministic(self):
        s = build_system("cartpole", "minimal")
        g1 = perturb(s, child_rng(14, "pdet"))
        g2 = perturb(s, child_rng(14, "pdet"))
        assert np.array_equal(g1.params.masses, g2.params.masses)
        assert np.array_equal(g1.params.friction, g2.params.friction)


class TestFriction:
    @pytest.mark.parametrize("kind,param", ALL_PAIRS)
    def test_dissipative_at_random_states(self, kind, param):
        nominal = build_system(kind, param)
        rng = child_rng(15, "dissip", kind, param)
        g = perturb(nominal, rng)
        for _ in range(50):
            st = random_initial_state(g, rng)
            f = g.friction_force(st.x, st.v)
            assert st.v @ f <= 1e-12

    def test_friction_power_parameterization_invariant(self):
        # same physical state and coefficients dissipate identical power
        rng = child_rng(16, "fpower")
        for kind in KINDS:
            views = []
            for p in PARAMETERIZATIONS:
                v = build_system(kind, p)
                params = v.params
                n_j = params.friction.size
                coeffs = np.linspace(0.2, 0.8, n_j)
                if kind == "fourbar":
                    coeffs[3] = 0.0
                from dataclasses import replace
                views.append(MechSystem(kind, p, replace(params, friction=coeffs)))
            q, qd = views[0].sample_joint_space(rng)
            powers = []
            for v in views:
                st = v.state_from_joint_space(q, qd)
                powers.append(st.v @ v.friction_force(st.x, st.v))
            assert np.ptp(powers) < 1e-9

    def test_nominal_has_no_friction(self):
        s = build_system("pendulum", "minimal")
        assert not s.has_friction
        assert np.array_equal(s.friction_force(np.zeros(1), np.ones(1)), np.zeros(1))


class TestSystemConfig:
    def test_round_trip(self):
        rng = child_rng(17, "cfg")
        g = perturb(build_system("fourbar", "maximal"), rng)
        doc = g.config_dict()
        g2 = MechSystem.from_config(doc)
        st = random_initial_state(g, child_rng(17, "cfg-state"))
        assert g2.energy(st) == g.energy(st)
        assert np.array_equal(g2.params.friction, g.params.friction)
