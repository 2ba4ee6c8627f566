"""Exact Gaussian process regression with a squared-exponential ARD kernel.

One independent scalar GP is fitted per output dimension; all dimensions
share the input set.  Inference follows the standard Cholesky path
(Rasmussen & Williams, Algorithm 2.1): with ``A = K + sigma_n^2 I + jitter``,

    mean(z) = prior(z) + k(z, Z) A^-1 r,      r = targets - prior(Z)
    var(z)  = k(z, z) - k(z, Z) A^-1 k(z, Z)^T

Hyperparameters are chosen by multi-start maximization of the log marginal
likelihood with analytic gradients in log-parameter space.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import FitError, InputError, NotFittedError, NumericalError, ShapeError
from .rng import child_rng

__all__ = [
    "KernelParams", "TrainingSet", "GpModel",
    "kernel_eval", "kernel_cross", "gram_matrix",
    "posterior_mean", "posterior_variance", "log_marginal_likelihood", "fit",
]

# Jitter ladder: relative to the mean Gram diagonal, escalated tenfold on
# Cholesky failure up to the cap, then NumericalError.
JITTER_START_FRACTION = 1e-10
JITTER_MAX_FRACTION = 1e-4

# Log-uniform initial-guess ranges for the multi-start optimization.
INIT_RANGES = {
    "lengthscale": (1e-2, 1e2),
    "signal_variance": (1e-4, 1e2),
    "noise_variance": (1e-8, 1e-1),
}
# Optimizer box (wider than the init ranges, in natural units).
BOUND_RANGES = {
    "lengthscale": (1e-3, 1e3),
    "signal_variance": (1e-8, 1e3),
    "noise_variance": (1e-12, 1.0),
}
_RESTART_MAXITER = 15
_POLISH_MAXITER = 100
_FAILED_OBJECTIVE = 1e25


@dataclass(frozen=True)
class KernelParams:
    """ARD squared-exponential kernel hyperparameters plus observation noise."""

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lengthscales",
                           np.atleast_1d(np.asarray(self.lengthscales, dtype=float)))
        if not self.signal_variance > 0:
            raise InputError("signal_variance must be positive")
        if not np.all(self.lengthscales > 0):
            raise InputError("all lengthscales must be positive")
        if self.noise_variance < 0:
            raise InputError("noise_variance must be nonnegative")

    @property
    def input_dim(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class TrainingSet:
    """Row-aligned (inputs, targets) pairs; inputs N x D, targets N x E."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.asarray(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        if inputs.shape[0] < 1:
            raise InputError("need at least one training row")
        if targets.shape[0] != inputs.shape[0]:
            raise ShapeError("inputs and targets must be row-aligned")
        if not (np.isfinite(inputs).all() and np.isfinite(targets).all()):
            raise InputError("training data must be finite")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]


def kernel_eval(z1, z2, params: KernelParams) -> float:
    """Squared-exponential kernel k(z1, z2); symmetric, equals
    signal_variance at zero distance."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape or z1.ndim != 1 or z1.size != params.input_dim:
        raise ShapeError(
            f"kernel inputs must be vectors of length {params.input_dim}")
    w = (z1 - z2) / params.lengthscales
    return float(params.signal_variance * np.exp(-0.5 * np.dot(w, w)))


def kernel_cross(Za, Zb, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix k(Za, Zb) of shape (len(Za), len(Zb))."""
    Za = np.atleast_2d(np.asarray(Za, dtype=float))
    Zb = np.atleast_2d(np.asarray(Zb, dtype=float))
    if Za.shape[1] != params.input_dim or Zb.shape[1] != params.input_dim:
        raise ShapeError("input dimension does not match lengthscale count")
    diff = Za[:, None, :] - Zb[None, :, :]
    sq = np.sum((diff / params.lengthscales) ** 2, axis=-1)
    return params.signal_variance * np.exp(-0.5 * sq)


def gram_matrix(Z, params: KernelParams, jitter: float = 0.0) -> np.ndarray:
    """Training Gram matrix K(Z, Z) + (noise_variance + jitter) I."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if not np.isfinite(Z).all():
        raise InputError("gram inputs must be finite")
    K = kernel_cross(Z, Z, params)
    K[np.diag_indices_from(K)] += params.noise_variance + jitter
    return K


def _cholesky_with_jitter(K_nojit: np.ndarray, scale: float):
    """Lower Cholesky of K with the escalating jitter ladder.

    Returns (L, jitter_used).  ``scale`` sets the ladder units (mean Gram
    diagonal).
    """
    jitter = JITTER_START_FRACTION * scale
    cap = JITTER_MAX_FRACTION * scale
    while True:
        try:
            A = K_nojit.copy()
            A[np.diag_indices_from(A)] += jitter
            L = cholesky(A, lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            if jitter >= cap:
                raise NumericalError(
                    f"Cholesky failed after escalating jitter to {jitter:.3e}",
                    jitter_attempted=jitter)
            jitter *= 10.0


def log_marginal_likelihood(params: KernelParams, data: TrainingSet, dim: int,
                            prior_values=None) -> float:
    """Gaussian log marginal likelihood of output column ``dim``.

    ``prior_values`` (length N) is subtracted from the target column to form
    the residual; omitted means a zero prior mean.
    """
    r = data.targets[:, dim].copy()
    if prior_values is not None:
        r -= np.asarray(prior_values, dtype=float)
    K = gram_matrix(data.inputs, params)
    scale = float(np.mean(np.diag(K)))
    L, _ = _cholesky_with_jitter(K, scale)
    alpha = cho_solve((L, True), r)
    n = data.n
    return float(-0.5 * r @ alpha - np.sum(np.log(np.diag(L)))
                 - 0.5 * n * np.log(2 * np.pi))


def _nlml_and_grad(log_theta, diffsq, r, D):
    """Negative LML and gradient in log-parameter space.

    theta = [log ell_1..log ell_D, log sf2, log sn2]; ``diffsq`` holds the
    precomputed pairwise squared differences per input dimension (n, n, D).
    Cholesky failures return a large penalty with zero gradient so the
    optimizer retreats.
    """
    inv_ell2 = np.exp(-2.0 * log_theta[:D])
    sf2 = np.exp(log_theta[D])
    sn2 = np.exp(log_theta[D + 1])
    n = diffsq.shape[0]

    sq = diffsq @ inv_ell2                     # (n, n): sum_d diffsq_d / ell_d^2
    C = np.exp(-0.5 * sq)
    A = sf2 * C
    jitter = JITTER_START_FRACTION * (sf2 + sn2)
    A[np.diag_indices_from(A)] += sn2 + jitter
    try:
        L = cholesky(A, lower=True)
    except np.linalg.LinAlgError:
        return _FAILED_OBJECTIVE, np.zeros_like(log_theta)

    alpha = cho_solve((L, True), r)
    nlml = 0.5 * r @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2 * np.pi)

    Ainv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Ainv          # d lml / dA = 0.5 * W

    grad = np.empty_like(log_theta)
    WK = W * (sf2 * C)
    # dA/d log ell_d = Kf * diffsq_d / ell_d^2
    grad[:D] = -0.5 * np.einsum("ij,ijd->d", WK, diffsq) * inv_ell2
    grad[D] = -0.5 * np.sum(WK)                # dA/d log sf2 = Kf
    grad[D + 1] = -0.5 * sn2 * np.trace(W)     # dA/d log sn2 = sn2 I
    return nlml, grad


def _optimize_dim(Z, r, restarts, rng):
    """Multi-start L-BFGS-B over log hyperparameters for one output column.

    Each restart runs a short descent; the best candidate is then polished.
    Ties are broken by the lowest restart index (strict improvement only).
    """
    D = Z.shape[1]
    lo = np.log([BOUND_RANGES["lengthscale"][0]] * D
                + [BOUND_RANGES["signal_variance"][0], BOUND_RANGES["noise_variance"][0]])
    hi = np.log([BOUND_RANGES["lengthscale"][1]] * D
                + [BOUND_RANGES["signal_variance"][1], BOUND_RANGES["noise_variance"][1]])
    bounds = list(zip(lo, hi))
    diff = Z[:, None, :] - Z[None, :, :]
    diffsq = diff ** 2                         # shared across evaluations
    fun = lambda lt: _nlml_and_grad(lt, diffsq, r, D)

    best = None
    failures = []
    for idx in range(restarts):
        ell0 = rng.uniform(np.log(INIT_RANGES["lengthscale"][0]),
                           np.log(INIT_RANGES["lengthscale"][1]), size=D)
        sf0 = rng.uniform(np.log(INIT_RANGES["signal_variance"][0]),
                          np.log(INIT_RANGES["signal_variance"][1]))
        sn0 = rng.uniform(np.log(INIT_RANGES["noise_variance"][0]),
                          np.log(INIT_RANGES["noise_variance"][1]))
        theta0 = np.concatenate([ell0, [sf0, sn0]])
        res = minimize(fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": _RESTART_MAXITER})
        if res.fun >= _FAILED_OBJECTIVE:
            failures.append(f"restart {idx}: factorization failed")
            continue
        if best is None or res.fun < best[0]:
            best = (res.fun, res.x)
    if best is None:
        raise FitError("all hyperparameter restarts failed", failures=failures)

    res = minimize(fun, best[1], jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": _POLISH_MAXITER})
    theta = res.x if res.fun <= best[0] else best[1]
    nlml = min(float(res.fun), float(best[0]))
    return KernelParams(signal_variance=float(np.exp(theta[D])),
                        lengthscales=np.exp(theta[:D]),
                        noise_variance=float(np.exp(theta[D + 1]))), -nlml


@dataclass
class GpModel:
    """Fitted per-output-dimension GPs sharing one input set.

    ``prior_mean_kind`` is one of "zero", "constant", "external".  For the
    external kind the mean function is supplied by the caller (the
    GP-integrator attaches the nominal one-step velocity map) and only the
    prior values at the training inputs are stored.
    """

    inputs: np.ndarray                      # (N, D)
    residuals: np.ndarray                   # (N, E) targets minus prior at Z
    kernel_params: list                     # length E
    prior_mean_kind: str = "zero"
    prior_mean_values: np.ndarray | None = None   # (E,) for "constant"
    prior_at_inputs: np.ndarray | None = None     # (N, E) for "external"
    mean_fn: object = None                  # callable z -> (E,), not serialized
    jitters: list = field(default_factory=list)
    lml: list = field(default_factory=list)
    seed: int | None = None
    _chols: list = field(default_factory=list, repr=False)
    _alphas: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.residuals = np.asarray(self.residuals, dtype=float)
        if self.residuals.ndim == 1:
            self.residuals = self.residuals[:, None]
        if len(self.kernel_params) != self.output_dim:
            raise ShapeError("one KernelParams per output dimension required")
        if not self._chols and self.n > 0:
            self._factorize()

    @property
    def n(self) -> int:
        return 0 if self.inputs.size == 0 else self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1] if self.inputs.ndim == 2 else self.kernel_params[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.residuals.shape[1] if self.residuals.size else len(self.kernel_params)

    def _factorize(self):
        self._chols = []
        self.jitters = list(self.jitters) if self.jitters else []
        recorded = bool(self.jitters)
        alphas = np.empty_like(self.residuals)
        for e, kp in enumerate(self.kernel_params):
            K = gram_matrix(self.inputs, kp)
            L, jit = _cholesky_with_jitter(K, float(np.mean(np.diag(K))))
            self._chols.append(L)
            if not recorded:
                self.jitters.append(jit)
            alphas[:, e] = cho_solve((L, True), self.residuals[:, e])
        self._alphas = alphas

    @classmethod
    def prior(cls, kernel_params: list, prior_mean_kind: str = "zero",
              prior_mean_values=None, mean_fn=None) -> "GpModel":
        """Model with empty conditioning set: posterior equals the prior."""
        D = kernel_params[0].input_dim
        E = len(kernel_params)
        m = cls(inputs=np.empty((0, D)), residuals=np.empty((0, E)),
                kernel_params=kernel_params, prior_mean_kind=prior_mean_kind,
                prior_mean_values=None if prior_mean_values is None
                else np.asarray(prior_mean_values, dtype=float),
                mean_fn=mean_fn)
        return m

    # -- prediction ---------------------------------------------------------

    def _prior_mean(self, z):
        E = self.output_dim
        if self.prior_mean_kind == "zero":
            return np.zeros(E) if z.ndim == 1 else np.zeros((z.shape[0], E))
        if self.prior_mean_kind == "constant":
            vals = np.asarray(self.prior_mean_values, dtype=float)
            return vals if z.ndim == 1 else np.broadcast_to(vals, (z.shape[0], E)).copy()
        if self.prior_mean_kind == "external":
            if self.mean_fn is None:
                raise NotFittedError("external prior mean function is not attached")
            if z.ndim == 1:
                return np.asarray(self.mean_fn(z), dtype=float)
            return np.stack([np.asarray(self.mean_fn(zi), dtype=float) for zi in z])
        raise InputError(f"unknown prior mean kind {self.prior_mean_kind!r}")

    def correction(self, z) -> np.ndarray:
        """Posterior mean of the residual process, k(z, Z) A^-1 r, per dim."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zq = np.atleast_2d(z)
        if zq.shape[1] != self.input_dim:
            raise ShapeError(f"query dimension must be {self.input_dim}")
        out = np.zeros((zq.shape[0], self.output_dim))
        if self.n > 0:
            for e, kp in enumerate(self.kernel_params):
                kq = kernel_cross(zq, self.inputs, kp)
                out[:, e] = kq @ self._alphas[:, e]
        return out[0] if single else out

    def posterior_mean(self, z) -> np.ndarray:
        return self._prior_mean(np.asarray(z, dtype=float)) + self.correction(z)

    def posterior_variance(self, z) -> np.ndarray:
        """Posterior variance per output dimension, clamped at zero."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zq = np.atleast_2d(z)
        if zq.shape[1] != self.input_dim:
            raise ShapeError(f"query dimension must be {self.input_dim}")
        var = np.empty((zq.shape[0], self.output_dim))
        for e, kp in enumerate(self.kernel_params):
            if self.n == 0:
                var[:, e] = kp.signal_variance
                continue
            kq = kernel_cross(zq, self.inputs, kp)
            beta = solve_triangular(self._chols[e], kq.T, lower=True)
            var[:, e] = kp.signal_variance - np.sum(beta ** 2, axis=0)
        var = np.maximum(var, 0.0)
        return var[0] if single else var

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "residuals": self.residuals.tolist(),
            "kernel": [{"signal_variance": kp.signal_variance,
                        "lengthscales": kp.lengthscales.tolist(),
                        "noise_variance": kp.noise_variance}
                       for kp in self.kernel_params],
            "prior_mean_kind": self.prior_mean_kind,
            "prior_mean_values": None if self.prior_mean_values is None
                                 else np.asarray(self.prior_mean_values).tolist(),
            "prior_at_inputs": None if self.prior_at_inputs is None
                               else np.asarray(self.prior_at_inputs).tolist(),
            "jitters": list(self.jitters),
            "lml": list(self.lml),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, mean_fn=None) -> "GpModel":
        kps = [KernelParams(k["signal_variance"], np.asarray(k["lengthscales"]),
                            k["noise_variance"]) for k in d["kernel"]]
        return cls(inputs=np.asarray(d["inputs"], dtype=float).reshape(-1, kps[0].input_dim),
                   residuals=np.asarray(d["residuals"], dtype=float).reshape(-1, len(kps)),
                   kernel_params=kps,
                   prior_mean_kind=d["prior_mean_kind"],
                   prior_mean_values=None if d["prior_mean_values"] is None
                                     else np.asarray(d["prior_mean_values"]),
                   prior_at_inputs=None if d.get("prior_at_inputs") is None
                                   else np.asarray(d["prior_at_inputs"]),
                   mean_fn=mean_fn,
                   jitters=list(d.get("jitters", [])),
                   lml=list(d.get("lml", [])),
                   seed=d.get("seed"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path, mean_fn=None) -> "GpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), mean_fn=mean_fn)


def posterior_mean(z, model: GpModel) -> np.ndarray:
    """Posterior mean at z: prior(z) + k(z, Z) A^-1 r."""
    return model.posterior_mean(z)


def posterior_variance(z, model: GpModel) -> np.ndarray:
    """Posterior variance at z per output dimension."""
    return model.posterior_variance(z)


def fit(data: TrainingSet, restarts: int, seed: int,
        prior_mean: str = "zero", prior_values=None, mean_fn=None) -> GpModel:
    """Fit one GP per output dimension by multi-start LML maximization.

    Parameters
    ----------
    data : TrainingSet
    restarts : int
        Number of log-uniform initial guesses per output dimension.
    seed : int
        Seeds the restart draws; the whole fit is deterministic given
        (data, restarts, seed).
    prior_mean : {"zero", "constant", "external"}
        "constant" uses the per-dimension mean of the targets; "external"
        subtracts ``prior_values`` (N x E, e.g. nominal-model predictions)
        and attaches ``mean_fn`` for predictions.
    """
    if data.n < 2:
        raise InputError("fit requires at least two training rows")
    if restarts < 1:
        raise InputError("restarts must be >= 1")

    if prior_mean == "zero":
        resid = data.targets.copy()
        const = None
        prior_at = None
    elif prior_mean == "constant":
        const = data.targets.mean(axis=0)
        resid = data.targets - const
        prior_at = None
    elif prior_mean == "external":
        if prior_values is None:
            raise InputError("external prior mean requires prior_values")
        prior_at = np.asarray(prior_values, dtype=float).reshape(data.n, data.output_dim)
        resid = data.targets - prior_at
        const = None
    else:
        raise InputError(f"unknown prior mean kind {prior_mean!r}")

    kps = []
    lmls = []
    for e in range(data.output_dim):
        rng = child_rng(seed, "gp-fit", e)
        kp, lml = _optimize_dim(data.inputs, resid[:, e], restarts, rng)
        kps.append(kp)
        lmls.append(lml)

    return GpModel(inputs=data.inputs.copy(), residuals=resid,
                   kernel_params=kps, prior_mean_kind=prior_mean,
                   prior_mean_values=const, prior_at_inputs=prior_at,
                   mean_fn=mean_fn, lml=lmls, seed=seed)
