"""Fast shipped self-checks: oracle and invariant spot tests.

Each check recomputes an expected value through an independent route (dense
inverses, finite differences, closed forms) and compares.  The CLI
``validate`` subcommand runs them all and reports pass/fail per check;
the full test suite covers the same ground much more densely.
"""

import numpy as np

from .gp import KernelParams, TrainingSet, fit, gram_matrix, kernel_eval
from .integrators import d0_residual, rollout
from .projection import project_velocity
from .rng import child_rng
from .systems import build_system, random_initial_state

__all__ = ["run_validation"]


def _check_kernel():
    p = KernelParams(1.0, np.array([1.0, 1.0]))
    val = kernel_eval(np.array([1.0, 0.0]), np.array([0.0, 0.0]), p)
    sym = kernel_eval(np.array([0.3, -0.2]), np.array([1.1, 0.4]), p) \
        - kernel_eval(np.array([1.1, 0.4]), np.array([0.3, -0.2]), p)
    err = abs(val - np.exp(-0.5)) + abs(sym)
    return err < 1e-12, f"kernel closed form/symmetry error {err:.2e}"


def _check_gp_oracle():
    rng = child_rng(0, "validate-gp")
    Z = rng.uniform(-1, 1, size=(12, 3))
    y = np.sin(Z @ np.array([1.0, -0.5, 0.3]))
    data = TrainingSet(Z, y)
    model = fit(data, restarts=2, seed=0)
    kp = model.kernel_params[0]
    A = gram_matrix(Z, kp, jitter=model.jitters[0])
    zq = rng.uniform(-1, 1, size=3)
    kq = np.array([kernel_eval(zq, zi, kp) for zi in Z])
    mean_dense = kq @ np.linalg.inv(A) @ model.residuals[:, 0]
    var_dense = kp.signal_variance - kq @ np.linalg.inv(A) @ kq
    err = abs(model.correction(zq)[0] - mean_dense) \
        + abs(model.posterior_variance(zq)[0] - max(var_dense, 0.0))
    return err < 1e-9, f"dense-inverse oracle deviation {err:.2e}"


def _check_d0():
    rng = child_rng(0, "validate-d0")
    dt = 0.01
    worst = 0.0
    for kind, par in (("pendulum", "maximal"), ("double_pendulum", "minimal")):
        s = build_system(kind, par)
        for _ in range(5):
            st = random_initial_state(s, rng)
            v0 = rng.uniform(-1, 1, s.dim_x)
            v1 = rng.uniform(-1, 1, s.dim_x)
            x1 = st.x + v0 * dt

            def action(x1v):
                va = (x1v - st.x) / dt
                vb = (x1 + v1 * dt - x1v) / dt
                return (s.lagrangian(st.x, va) + s.lagrangian(x1v, vb)) * dt

            fd = np.zeros(s.dim_x)
            h = 1e-6
            for j in range(s.dim_x):
                xp = x1.copy(); xp[j] += h
                xm = x1.copy(); xm[j] -= h
                fd[j] = -(action(xp) - action(xm)) / (2 * h)
            d0 = d0_residual(s, x1, v0, v1, dt)
            worst = max(worst, float(np.max(np.abs(d0 - fd))
                                     / max(np.max(np.abs(fd)), 1e-9)))
    return worst < 1e-6, f"discrete-action gradient mismatch {worst:.2e}"


def _check_energy_invariance():
    rng = child_rng(0, "validate-energy")
    worst = 0.0
    for kind in ("pendulum", "cartpole", "double_pendulum", "fourbar"):
        views = [build_system(kind, p) for p in ("minimal", "sincos", "maximal")]
        q, qd = views[0].sample_joint_space(rng)
        energies = [v.energy(v.state_from_joint_space(q, qd)) for v in views]
        worst = max(worst, float(np.ptp(energies)))
    return worst < 1e-9, f"cross-parameterization energy spread {worst:.2e}"


def _check_projection():
    rng = child_rng(0, "validate-proj")
    s = build_system("pendulum", "maximal")
    st = random_initial_state(s, rng)
    x1 = st.x + st.v * 0.01
    v_u = st.v + rng.uniform(-0.5, 0.5, s.dim_x)
    v, _, _ = project_velocity(v_u, x1, s, 0.01)
    feas = float(np.max(np.abs(s.constraints.g(x1 + v * 0.01))))
    v2, _, _ = project_velocity(v, x1, s, 0.01)
    idem = float(np.max(np.abs(v2 - v)))
    ok = feas < 1e-10 and idem < 1e-10
    return ok, f"feasibility {feas:.2e}, idempotence {idem:.2e}"


def _check_constrained_rollout():
    rng = child_rng(0, "validate-roll")
    s = build_system("double_pendulum", "maximal")
    tr = rollout(s, random_initial_state(s, rng), 0.01, 100)
    worst = float(tr.constraint_norms.max())
    return worst < 1e-8, f"max constraint violation {worst:.2e}"


def run_validation(verbose: bool = False):
    """Run all self-checks; returns list of (name, passed, detail)."""
    checks = [
        ("kernel-closed-form", _check_kernel),
        ("gp-dense-oracle", _check_gp_oracle),
        ("discrete-action-gradient", _check_d0),
        ("energy-parameterization-invariance", _check_energy_invariance),
        ("projection-kkt", _check_projection),
        ("constrained-rollout-drift", _check_constrained_rollout),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:   # a failing check must not stop the rest
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
