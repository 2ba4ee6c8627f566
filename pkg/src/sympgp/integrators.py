"""First-order variational integrator plus Euler baselines.

The variational step comes from making the discrete action

    S_d = sum_{k=0,1} L(x_k, v_k) dt,    v_k = (x_{k+1} - x_k) / dt

stationary with respect to the middle stencil point.  Writing the result in
terms of the next velocity gives the implicit update

    x_{k+1} = x_k + v_k dt
    d0(v_{k+1}) = M(x_{k+1}) v_{k+1} - M(x_k) v_k
                  - dt * (0.5 d(v^T M v)/dx - dV/dx)(x_{k+1}, v_{k+1}) = 0

and, for constrained systems, d0 - G(x_{k+1})^T lam = 0 together with
g(x_{k+1} + v_{k+1} dt) = 0.  The multiplier lam absorbs a factor dt
(a constraint impulse), which keeps the stacked Newton system well scaled.

Baselines: explicit Euler with acceleration-level constraints (drifts, by
design) and semi-implicit (symplectic) Euler with post-step projection onto
the constraint manifold, used for ground-truth generation.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, SolverError
from .projection import project_position, project_velocity
from .solvers import SolverConfig, newton_solve
from .systems import MechSystem, State

__all__ = [
    "StepResult", "SolverConfig", "discrete_velocity", "d0_residual",
    "step_nominal_unconstrained", "step_nominal_constrained", "step_nominal",
    "explicit_euler_step", "symplectic_euler_step",
    "Trajectory", "rollout", "write_trajectory_csv",
    "discretely_consistent_velocity",
]

_POSITION_PROJECT_TOL = 1e-10


@dataclass
class StepResult:
    """One implicit step: next state, constraint impulses, solver stats."""

    next_state: State
    multipliers: np.ndarray
    solver_iterations: int
    residual_norm: float


def discrete_velocity(x_k, x_k1, dt: float) -> np.ndarray:
    """Forward-difference velocity (x_{k+1} - x_k) / dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (np.asarray(x_k1, dtype=float) - np.asarray(x_k, dtype=float)) / dt


def d0_residual(system: MechSystem, x_k1, v_k, v_k1, dt: float) -> np.ndarray:
    """Unconstrained discrete Euler-Lagrange residual at the middle point.

    Equals minus the gradient of the discrete action with respect to
    x_{k+1}; for a constant mass matrix it reduces to
    M (v_{k+1} - v_k) + dV/dx(x_{k+1}) dt.
    """
    x_k1 = np.asarray(x_k1, dtype=float)
    v_k = np.asarray(v_k, dtype=float)
    v_k1 = np.asarray(v_k1, dtype=float)
    M1 = system.mass_matrix(x_k1)
    if system.mass_is_constant:
        p_prev = M1 @ v_k
    else:
        p_prev = system.mass_matrix(x_k1 - dt * v_k) @ v_k
    res = M1 @ v_k1 - p_prev + dt * system.potential_grad(x_k1)
    if not system.mass_is_constant:
        res -= dt * system.kinetic_x_grad(x_k1, v_k1)
    return res


def _d0_jacobian(system: MechSystem, x_k1, v_k1, dt: float) -> np.ndarray:
    J = system.mass_matrix(x_k1)
    if not system.mass_is_constant:
        J = J - dt * system.kinetic_x_grad_jac_v(x_k1, v_k1)
    return J


def step_nominal_unconstrained(system: MechSystem, state: State, dt: float,
                               config: SolverConfig = SolverConfig()) -> StepResult:
    """Variational step for an unconstrained system (damped Newton on d0)."""
    x1 = state.x + state.v * dt
    residual = lambda v1: d0_residual(system, x1, state.v, v1, dt)
    jacobian = lambda v1: _d0_jacobian(system, x1, v1, dt)
    v1, info = newton_solve(residual, jacobian, state.v, config)
    return StepResult(State(x1, v1), np.empty(0), info.iterations,
                      info.residual_norm)


def step_nominal_constrained(system: MechSystem, state: State, dt: float,
                             config: SolverConfig = SolverConfig()) -> StepResult:
    """Variational step with constraints enforced at the following position.

    Solves d0(v1) - G(x1)^T lam = 0 and g(x1 + v1 dt) = 0 for (v1, lam);
    lam is the constraint impulse (force times dt).
    """
    con = system.constraints
    n = system.dim_x
    x1 = state.x + state.v * dt
    G1T = con.jacobian(x1).T

    def residual(w):
        v1, lam = w[:n], w[n:]
        return np.concatenate([
            d0_residual(system, x1, state.v, v1, dt) - G1T @ lam,
            con.g(x1 + v1 * dt),
        ])

    def jacobian(w):
        v1 = w[:n]
        m = con.count
        jac = np.zeros((n + m, n + m))
        jac[:n, :n] = _d0_jacobian(system, x1, v1, dt)
        jac[:n, n:] = -G1T
        jac[n:, :n] = dt * con.jacobian(x1 + v1 * dt)
        return jac

    w0 = np.concatenate([state.v, np.zeros(con.count)])
    w, info = newton_solve(residual, jacobian, w0, config)
    return StepResult(State(x1, w[:n]), w[n:], info.iterations,
                      info.residual_norm)


def step_nominal(system: MechSystem, state: State, dt: float,
                 config: SolverConfig = SolverConfig()) -> StepResult:
    """Dispatch to the constrained or unconstrained variational step."""
    if system.is_constrained:
        return step_nominal_constrained(system, state, dt, config)
    return step_nominal_unconstrained(system, state, dt, config)


def _acceleration(system: MechSystem, x, v) -> np.ndarray:
    """Continuous-time acceleration M a = forces, with acceleration-level
    constraint forces for constrained systems."""
    M = system.mass_matrix(x)
    rhs = -system.potential_grad(x) + system.friction_force(x, v)
    if not system.mass_is_constant:
        dM = system.mass_matrix_deriv(x)
        Mdot = np.einsum("ijl,l->ij", dM, v)
        rhs += system.kinetic_x_grad(x, v) - Mdot @ v
    if not system.is_constrained:
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular mass matrix") from exc
    con = system.constraints
    G = con.jacobian(x)
    m = con.count
    n = system.dim_x
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = M
    kkt[:n, n:] = G.T
    kkt[n:, :n] = G
    sol_rhs = np.concatenate([rhs, -con.gamma(x, v)])
    try:
        sol = np.linalg.solve(kkt, sol_rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular KKT system in acceleration solve") from exc
    return sol[:n]


def explicit_euler_step(system: MechSystem, state: State, dt: float) -> State:
    """Explicit Euler baseline; constraints only at acceleration level."""
    a = _acceleration(system, state.x, state.v)
    return State(state.x + state.v * dt, state.v + a * dt)


def symplectic_euler_step(system: MechSystem, state: State, dt: float,
                          stabilize: bool = True) -> State:
    """Semi-implicit Euler (velocity first, then position).

    For constrained systems the new position is projected back onto
    g = 0 and the velocity onto the constraint tangent space, which keeps
    long ground-truth integrations drift-free.
    """
    a = _acceleration(system, state.x, state.v)
    v1 = state.v + a * dt
    x1 = state.x + v1 * dt
    if system.is_constrained and stabilize:
        x1 = project_position(system, x1, tol=_POSITION_PROJECT_TOL)
        G = system.constraints.jacobian(x1)
        v1 = v1 - G.T @ np.linalg.solve(G @ G.T, G @ v1)
    return State(x1, v1)


def discretely_consistent_velocity(system: MechSystem, state: State,
                                   dt: float,
                                   config: SolverConfig = SolverConfig()) -> State:
    """Adjust the initial velocity so g(x + v dt) = 0.

    The constrained variational scheme keeps every position on the manifold
    provided the starting velocity already satisfies the discrete constraint;
    a continuous-time consistent velocity (G v = 0) misses it by O(dt^2).
    """
    if not system.is_constrained:
        return state.copy()
    v, _, _ = project_velocity(state.v, state.x, system, dt, config)
    return State(state.x.copy(), v)


@dataclass
class Trajectory:
    """Uniformly sampled trajectory with energy/constraint diagnostics."""

    times: np.ndarray
    positions: np.ndarray       # (n_steps + 1, dim_x)
    velocities: np.ndarray
    energies: np.ndarray
    constraint_norms: np.ndarray
    solver_iterations: list = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.times.size

    def state(self, k: int) -> State:
        return State(self.positions[k].copy(), self.velocities[k].copy())


def rollout(system: MechSystem, state: State, dt: float, n_steps: int,
            method: str = "nominal", config: SolverConfig = SolverConfig(),
            project_initial: bool | None = None,
            step_fn=None) -> Trajectory:
    """Integrate ``n_steps`` steps and record diagnostics.

    ``method`` is one of "nominal", "explicit_euler", "symplectic_euler";
    alternatively ``step_fn(state) -> State`` overrides it (used for the
    GP-augmented integrators).  ``project_initial`` defaults to making the
    starting velocity discretely consistent for constrained variational
    rollouts.
    """
    if step_fn is None:
        if method == "nominal":
            step_fn = lambda s: step_nominal(system, s, dt, config).next_state
            if project_initial is None:
                project_initial = system.is_constrained
        elif method == "explicit_euler":
            step_fn = lambda s: explicit_euler_step(system, s, dt)
        elif method == "symplectic_euler":
            step_fn = lambda s: symplectic_euler_step(system, s, dt)
        else:
            raise ValueError(f"unknown method {method!r}")
    if project_initial:
        state = discretely_consistent_velocity(system, state, dt, config)

    n = system.dim_x
    X = np.empty((n_steps + 1, n))
    V = np.empty_like(X)
    E = np.empty(n_steps + 1)
    C = np.zeros(n_steps + 1)
    cur = state.copy()
    for k in range(n_steps + 1):
        X[k], V[k] = cur.x, cur.v
        E[k] = system.energy(cur)
        if system.is_constrained:
            C[k] = float(np.max(np.abs(system.constraints.g(cur.x))))
        if k < n_steps:
            cur = step_fn(cur)
    return Trajectory(times=np.arange(n_steps + 1) * dt, positions=X,
                      velocities=V, energies=E, constraint_norms=C)


def write_trajectory_csv(path, traj: Trajectory):
    """CSV with header t, x_0.., v_0.., energy, constraint_norm."""
    dim = traj.positions.shape[1]
    header = (["t"] + [f"x_{i}" for i in range(dim)]
              + [f"v_{i}" for i in range(dim)] + ["energy", "constraint_norm"])
    lines = [",".join(header)]
    for k in range(traj.n_states):
        row = ([repr(float(traj.times[k]))]
               + [repr(float(v)) for v in traj.positions[k]]
               + [repr(float(v)) for v in traj.velocities[k]]
               + [repr(float(traj.energies[k])), repr(float(traj.constraint_norms[k]))])
        lines.append(",".join(row))
    from .io import write_text_atomic
    write_text_atomic(path, "\n".join(lines) + "\n")
