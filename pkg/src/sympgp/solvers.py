"""Damped Newton iteration for the small implicit systems in this library.

All systems here have at most ~22 unknowns, so every linear solve uses a
dense factorization.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError

__all__ = ["SolverConfig", "NewtonInfo", "newton_solve"]


@dataclass(frozen=True)
class SolverConfig:
    """Newton tolerances: convergence is on the max norm of the residual."""

    tolerance: float = 1e-10
    max_iterations: int = 50
    backtrack_factor: float = 0.5
    max_backtracks: int = 30

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class NewtonInfo:
    iterations: int = 0
    residual_norm: float = np.inf
    converged: bool = False
    backtracks: int = 0
    residual_history: list = field(default_factory=list)

    @property
    def damped(self) -> bool:
        return self.backtracks > 0


def newton_solve(residual_fn, jacobian_fn, w0, config: SolverConfig = SolverConfig(),
                 linear_solve=None):
    """Solve ``residual_fn(w) = 0`` by Newton iteration with backtracking.

    Parameters
    ----------
    residual_fn, jacobian_fn : callable
        Residual and its Jacobian at the current iterate.  ``jacobian_fn``
        may be None, in which case a central finite difference of the
        residual is used.
    w0 : ndarray
        Initial guess.
    linear_solve : callable, optional
        Custom ``(jacobian, rhs) -> step`` used, e.g., to exploit KKT
        structure or to regularize.  Defaults to ``numpy.linalg.solve``.

    Returns
    -------
    (w, info) : ndarray, NewtonInfo

    Raises
    ------
    SolverError
        If the residual norm does not reach ``config.tolerance`` within
        ``config.max_iterations`` iterations.
    """
    if linear_solve is None:
        linear_solve = lambda jac, rhs: np.linalg.solve(jac, rhs)
    if jacobian_fn is None:
        jacobian_fn = lambda w: _fd_jacobian(residual_fn, w)

    w = np.array(w0, dtype=float)
    res = residual_fn(w)
    norm = float(np.max(np.abs(res)))
    info = NewtonInfo(residual_history=[norm])

    for it in range(config.max_iterations):
        if norm <= config.tolerance:
            info.converged = True
            break
        jac = jacobian_fn(w)
        try:
            step = linear_solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"linear solve failed at iteration {it}: {exc}",
                              residual_history=info.residual_history) from exc

        alpha = 1.0
        accepted = False
        for _ in range(config.max_backtracks + 1):
            w_try = w + alpha * step
            res_try = residual_fn(w_try)
            norm_try = float(np.max(np.abs(res_try)))
            if np.isfinite(norm_try) and norm_try < norm:
                accepted = True
                break
            alpha *= config.backtrack_factor
            info.backtracks += 1
        if not accepted:
            # Full step may still be the converged fixed point (residual at
            # rounding level); report failure otherwise.
            if norm <= 10 * config.tolerance:
                info.converged = norm <= config.tolerance
                break
            raise SolverError(
                f"line search stalled at iteration {it} (residual {norm:.3e})",
                residual_history=info.residual_history)

        w, res, norm = w_try, res_try, norm_try
        info.iterations = it + 1
        info.residual_history.append(norm)

    if norm <= config.tolerance:
        info.converged = True
    info.residual_norm = norm
    if not info.converged:
        raise SolverError(
            f"Newton did not converge in {config.max_iterations} iterations "
            f"(residual {norm:.3e})", residual_history=info.residual_history)
    return w, info


def _fd_jacobian(fn, w, h=1e-7):
    f0 = fn(w)
    jac = np.empty((f0.size, w.size))
    for j in range(w.size):
        hj = h * max(1.0, abs(w[j]))
        wp = w.copy(); wp[j] += hj
        wm = w.copy(); wm[j] -= hj
        jac[:, j] = (fn(wp) - fn(wm)) / (2 * hj)
    return jac
