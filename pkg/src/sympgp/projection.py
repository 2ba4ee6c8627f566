"""Least-squares projection of a velocity onto the constraint manifold.

Solves

    min 0.5 ||v - v_u||^2   s.t.   g(x1 + v dt) = 0

via Newton on the KKT conditions (stationarity v - v_u - Ghat^T mu = 0 with
Ghat = dt G(x1 + v dt), feasibility g = 0).  The linearization drops the
constraint-curvature term (Gauss-Newton); the residual is exact, so the
converged point satisfies the exact first-order conditions.

A near-singular multiplier system gets a tiny diagonal ridge before the
solve is declared failed (kinematic singularities).
"""

import numpy as np

from .errors import SingularityError, SolverError
from .solvers import SolverConfig, newton_solve

__all__ = ["project_position", "project_velocity", "project_velocity_batch"]

_RIDGE = 1e-12


def project_position(system, x, tol=1e-10, max_iter=20) -> np.ndarray:
    """Gauss-Newton projection of a position onto the constraint manifold."""
    if not system.is_constrained:
        return np.asarray(x, dtype=float).copy()
    con = system.constraints
    x = np.asarray(x, dtype=float).copy()
    for _ in range(max_iter):
        gval = con.g(x)
        if np.max(np.abs(gval)) <= tol:
            return x
        G = con.jacobian(x)
        x -= G.T @ np.linalg.solve(G @ G.T, gval)
    raise SolverError("position projection did not converge")


def project_velocity(v_u, x1, system, dt, config: SolverConfig = SolverConfig()):
    """Project ``v_u`` so the next position satisfies the constraints.

    Returns ``(v, multipliers, info)``.  For unconstrained systems the
    projection is the identity.  ``info.damped`` flags steps where the
    Newton line search had to backtrack (possible basin ambiguity).
    """
    v_u = np.asarray(v_u, dtype=float)
    if not system.is_constrained:
        return v_u.copy(), np.empty(0), None
    con = system.constraints
    n = system.dim_x
    m = con.count
    x1 = np.asarray(x1, dtype=float)

    def residual(w):
        v, mu = w[:n], w[n:]
        x2 = x1 + v * dt
        G2 = con.jacobian(x2)
        return np.concatenate([v - v_u - dt * (G2.T @ mu), con.g(x2)])

    def jacobian(w):
        v = w[:n]
        G2 = con.jacobian(x1 + v * dt)
        jac = np.zeros((n + m, n + m))
        jac[:n, :n] = np.eye(n)
        jac[:n, n:] = -dt * G2.T
        jac[n:, :n] = dt * G2
        return jac

    def linear_solve(jac, rhs):
        try:
            return np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            reg = jac.copy()
            reg[n:, n:] += _RIDGE * np.eye(m)
            try:
                return np.linalg.solve(reg, rhs)
            except np.linalg.LinAlgError as exc:
                raise SingularityError(
                    "constraint Jacobian is rank deficient") from exc

    w0 = np.concatenate([v_u, np.zeros(m)])
    w, info = newton_solve(residual, jacobian, w0, config, linear_solve=linear_solve)
    return w[:n], w[n:], info


def project_velocity_batch(V_u, x1, system, dt, tol=1e-10, max_iter=40):
    """Vectorized projection of a batch of velocities at one position.

    Gauss-Newton SQP: each iteration solves the projection problem with the
    constraint linearized at the current iterate, which converges to the
    same KKT point as :func:`project_velocity`.  Returns ``(V, converged)``
    where non-converged rows are reported, not raised (callers decide).
    """
    V_u = np.atleast_2d(np.asarray(V_u, dtype=float))
    if not system.is_constrained:
        return V_u.copy(), np.ones(V_u.shape[0], dtype=bool)
    con = system.constraints
    B = V_u.shape[0]
    m = con.count
    x1 = np.asarray(x1, dtype=float)
    step_tol = 1e-11

    V = V_u.copy()
    last_step = np.full(B, np.inf)
    converged = np.zeros(B, dtype=bool)
    active = np.arange(B)
    eye_m = np.eye(m)
    for _ in range(max_iter):
        X2 = x1 + V[active] * dt
        c = con.g(X2)
        # converged once feasible and the previous update has settled
        done = (np.max(np.abs(c), axis=-1) <= tol) & (last_step[active] <= step_tol)
        converged[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break
        c = c[~done]
        G = dt * con.jacobian(X2[~done])
        # SQP step: solve (G G^T) mu = c + G (V_u - V), V <- V_u - G^T mu
        rhs = c + np.einsum("bmn,bn->bm", G, V_u[active] - V[active])
        A = G @ G.transpose(0, 2, 1)
        # relative ridge keeps near-singular batches solvable without
        # biasing well-conditioned ones
        scale = np.einsum("bmm->b", A) / m
        A = A + (1e-13 * scale)[:, None, None] * eye_m
        try:
            mu = np.linalg.solve(A, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        V_new = V_u[active] - np.einsum("bmn,bm->bn", G, mu)
        last_step[active] = np.max(np.abs(V_new - V[active]), axis=-1)
        V[active] = V_new
    return V, converged
