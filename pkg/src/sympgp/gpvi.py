"""GP-augmented variational integrators for unconstrained and constrained
mechanical systems, with constraint-manifold projection and a sampled
Lipschitz/posterior-variance uncertainty bound.

A trained model predicts the next velocity as

    v_next(z) = vbar(z) + k(z, Z) (K + sn^2 I)^-1 (y - vbar(Z))

where vbar is the nominal variational integrator's one-step velocity (known
prior dynamics) or the per-dimension constant training mean (no prior
dynamics).  Constrained systems project the prediction back onto the
constraint manifold, which keeps positions on g = 0 without drift.

The one-step uncertainty bound is sqrt(gamma) * sigma(z) per velocity
dimension with gamma = L^2 * beta: L a sampled Lipschitz constant of the
projection and beta a scaling calibrated on validation states.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import gp as gpmod
from .errors import EstimationError, InputError, SolverError, TrainingError
from .integrators import step_nominal
from .projection import project_position, project_velocity, project_velocity_batch
from .rng import child_rng
from .solvers import SolverConfig
from .systems import MechSystem, State

__all__ = [
    "GpviModel", "UncertaintyBound", "train",
    "step_gp", "step_gp_unconstrained", "step_gp_constrained",
    "estimate_lipschitz", "prediction_bound", "calibrate_beta",
    "bound_violation_rate", "default_region",
]

LIPSCHITZ_SAFETY = 1.1
REGION_INFLATION = 0.2
_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class UncertaintyBound:
    """High-probability bound parameters; gamma = lipschitz_L^2 * beta."""

    lipschitz_L: float
    beta: float
    delta: float = 0.05

    def __post_init__(self):
        if self.lipschitz_L < 0 or self.beta <= 0:
            raise InputError("need lipschitz_L >= 0 and beta > 0")
        if not 0 < self.delta < 1:
            raise InputError("delta must lie in (0, 1)")

    @property
    def gamma(self) -> float:
        return self.lipschitz_L ** 2 * self.beta


class GpviModel:
    """Nominal system + residual GP + step size: the combined integrator.

    ``prior_mean`` is "nominal" (residuals against the nominal variational
    integrator) or "constant" (no prior dynamics knowledge; the system
    object still supplies the known constraints and geometry).
    """

    def __init__(self, system: MechSystem, gp_model: gpmod.GpModel, dt: float,
                 solver: SolverConfig = SolverConfig(), prior_mean: str = "nominal"):
        if prior_mean not in ("nominal", "constant"):
            raise InputError("prior_mean must be 'nominal' or 'constant'")
        if gp_model.input_dim != 2 * system.dim_x:
            raise InputError("GP input dimension must be 2 * dim_x")
        if gp_model.output_dim != system.dim_x:
            raise InputError("GP output dimension must be dim_x")
        self.system = system
        self.gp = gp_model
        self.dt = float(dt)
        self.solver = solver
        self.prior_mean = prior_mean
        if prior_mean == "nominal" and gp_model.prior_mean_kind == "external":
            gp_model.mean_fn = self.nominal_velocity

    def nominal_velocity(self, z) -> np.ndarray:
        """One-step velocity of the nominal variational integrator at z."""
        st = State.from_z(z)
        return step_nominal(self.system, st, self.dt, self.solver).next_state.v

    def velocity_mean(self, z) -> np.ndarray:
        """Unconstrained velocity prediction v_u (before any projection)."""
        if self.prior_mean == "nominal":
            return self.nominal_velocity(z) + self.gp.correction(z)
        return self.gp.posterior_mean(z)

    def velocity_sigma(self, z) -> np.ndarray:
        return np.sqrt(self.gp.posterior_variance(z))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {"system": self.system.config_dict(), "gp": self.gp.to_dict(),
                "dt": self.dt, "prior_mean": self.prior_mean,
                "solver_tolerance": self.solver.tolerance}

    @classmethod
    def from_dict(cls, d: dict) -> "GpviModel":
        system = MechSystem.from_config(d["system"])
        gp_model = gpmod.GpModel.from_dict(d["gp"])
        return cls(system, gp_model, d["dt"],
                   SolverConfig(tolerance=d.get("solver_tolerance", 1e-10)),
                   prior_mean=d["prior_mean"])

    def save(self, path):
        from .io import write_json_atomic
        write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "GpviModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train(system: MechSystem, data: gpmod.TrainingSet, dt: float,
          restarts: int, seed: int, prior_mean: str = "nominal",
          solver: SolverConfig = SolverConfig()) -> GpviModel:
    """Fit the residual GP from (z_k, v_{k+1}) pairs of the true system.

    With ``prior_mean="nominal"`` each training input gets a nominal
    one-step velocity prediction; the GP is fitted on the residual targets
    y - vbar(Z).  With "constant" the GP uses the per-dimension mean of the
    targets (no prior dynamics model; constraints remain known).
    """
    if data.input_dim != 2 * system.dim_x:
        raise InputError("training inputs must be augmented states [x; v]")
    if data.output_dim != system.dim_x:
        raise InputError("training targets must be next-step velocities")
    if prior_mean == "nominal":
        # The constrained nominal solve compensates any off-manifold
        # component of the observed position within one step, i.e. with a
        # spurious velocity of order (noise / dt).  Constraints are known,
        # so the nominal prediction is evaluated at the constraint-
        # consistent position; the GP inputs keep the raw observations.
        n = system.dim_x
        prior_values = np.empty((data.n, n))
        for i, z in enumerate(data.inputs):
            try:
                x = project_position(system, z[:n])
                prior_values[i] = step_nominal(
                    system, State(x, z[n:]), dt, solver).next_state.v
            except Exception as exc:
                raise TrainingError(
                    f"nominal solve failed on training row {i}: {exc}",
                    row=i) from exc
        gp_model = gpmod.fit(data, restarts, seed, prior_mean="external",
                             prior_values=prior_values)
    elif prior_mean == "constant":
        gp_model = gpmod.fit(data, restarts, seed, prior_mean="constant")
    else:
        raise InputError("prior_mean must be 'nominal' or 'constant'")
    return GpviModel(system, gp_model, dt, solver, prior_mean=prior_mean)


def step_gp_unconstrained(model: GpviModel, state: State) -> State:
    """GP-augmented step for unconstrained systems."""
    x1 = state.x + state.v * model.dt
    v1 = model.velocity_mean(state.z)
    return State(x1, v1)


def step_gp_constrained(model: GpviModel, state: State) -> State:
    """GP-augmented step with projection onto the constraint manifold."""
    x1 = state.x + state.v * model.dt
    v_u = model.velocity_mean(state.z)
    v1, _, _ = project_velocity(v_u, x1, model.system, model.dt, model.solver)
    return State(x1, v1)


def step_gp(model: GpviModel, state: State) -> State:
    if model.system.is_constrained:
        return step_gp_constrained(model, state)
    return step_gp_unconstrained(model, state)


def default_region(model: GpviModel) -> np.ndarray:
    """Axis-aligned box spanned by the training inputs, inflated 20%."""
    Z = model.gp.inputs
    if Z.shape[0] == 0:
        raise InputError("default region needs a trained model")
    lo = Z.min(axis=0)
    hi = Z.max(axis=0)
    span = hi - lo
    pad = REGION_INFLATION * np.where(span > 0, span, 1.0)
    return np.stack([lo - pad, hi + pad])


def estimate_lipschitz(model: GpviModel, region=None, samples: int = 50,
                       seed: int = 0, states=None) -> float:
    """Sampled Lipschitz constant of the velocity projection.

    Probes are either drawn uniformly from ``region`` (default: the
    training box inflated 20% per dimension) or taken from ``states``
    directly — for strongly constrained systems random box corners are far
    off the manifold and their projections rarely converge, so probing at
    recorded states is the practical choice.  At each probe the Jacobian of
    the projection with respect to the unconstrained velocity is formed by
    central differences at the model's own prediction; the estimate is the
    largest induced 2-norm times a 1.1 safety factor.  Probes whose
    projections fail are skipped; only all-failed probes raise.  Region
    samples are drawn sequentially from one stream, so a larger sample
    count extends (never reshuffles) a smaller one.
    """
    if samples < 2:
        raise InputError("need at least two samples")
    if states is None:
        if region is None:
            region = default_region(model)
        region = np.asarray(region, dtype=float)
    else:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        samples = min(samples, states.shape[0])
    rng = child_rng(seed, "lipschitz")
    n = model.system.dim_x
    sys_ = model.system
    worst = 0.0
    failures = 0
    successes = 0
    for k in range(samples):
        z = states[k] if states is not None else rng.uniform(region[0], region[1])
        if not sys_.is_constrained:
            worst = max(worst, 1.0)
            successes += 1
            continue
        x1 = z[:n] + z[n:] * model.dt
        try:
            v_u = model.velocity_mean(z)
            jac = np.empty((n, n))
            h = 1e-5 * max(1.0, float(np.max(np.abs(v_u))))
            for j in range(n):
                vp = v_u.copy(); vp[j] += h
                vm = v_u.copy(); vm[j] -= h
                pp, _, _ = project_velocity(vp, x1, sys_, model.dt, model.solver)
                pm, _, _ = project_velocity(vm, x1, sys_, model.dt, model.solver)
                jac[:, j] = (pp - pm) / (2 * h)
            worst = max(worst, float(np.linalg.norm(jac, 2)))
            successes += 1
        except Exception:
            failures += 1
    if successes == 0:
        raise EstimationError(f"all {failures} Lipschitz probes failed")
    return LIPSCHITZ_SAFETY * worst


def prediction_bound(model: GpviModel, z, bound: UncertaintyBound) -> np.ndarray:
    """Per-dimension one-step velocity error bound sqrt(gamma) sigma(z)."""
    return np.sqrt(bound.gamma) * model.velocity_sigma(z)


def _projection_deviations(model: GpviModel, z, draws: int, rng):
    """Monte-Carlo |v(sample) - v(mean)| normalized by sigma, per dimension.

    Returns (ratios, sigma, n_unconverged): ratios has shape (draws, dim_x)
    with entries |dv_e| / sigma_e; non-converged projections are dropped and
    counted.
    """
    sys_ = model.system
    n = sys_.dim_x
    z = np.asarray(z, dtype=float)
    mean = model.velocity_mean(z)
    sigma = np.maximum(model.velocity_sigma(z), _SIGMA_FLOOR)
    samples = mean + sigma * rng.standard_normal((draws, n))
    if not sys_.is_constrained:
        dev = np.abs(samples - mean)
        return dev / sigma, sigma, 0
    x1 = z[:n] + z[n:] * model.dt
    v_mean, _, _ = project_velocity(mean, x1, sys_, model.dt, model.solver)
    V, ok = project_velocity_batch(samples, x1, sys_, model.dt)
    dev = np.abs(V[ok] - v_mean)
    return dev / sigma, sigma, int(np.sum(~ok))


def calibrate_beta(model: GpviModel, states, lipschitz_L: float,
                   delta: float = 0.05, draws: int = 2000,
                   seed: int = 0, margin: float = 0.5) -> float:
    """Smallest beta meeting the target miss rate on validation states.

    Pools max_e |dv_e| / (L sigma_e) over all (state, draw) pairs, where
    dv is the deviation of the projected sample from the projected mean,
    and returns the squared (1 - margin * delta) quantile.  ``margin < 1``
    calibrates conservatively so held-out violation rates stay below delta.
    Pass the same ``lipschitz_L`` used when evaluating the bound.
    """
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    stats = []
    for i, z in enumerate(states):
        rng = child_rng(seed, "beta-cal", i)
        try:
            ratios, _, _bad = _projection_deviations(model, z, draws, rng)
        except SolverError:
            # mean prediction itself not projectable (Assumption-1 failure
            # region, e.g. a kinematic singularity): skip the state
            continue
        if ratios.size:
            stats.append(np.max(ratios, axis=1))
    if not stats:
        raise EstimationError("no successful calibration draws")
    pooled = np.concatenate(stats) / max(lipschitz_L, _SIGMA_FLOOR)
    q = float(np.quantile(pooled, 1.0 - margin * delta))
    return max(q, _SIGMA_FLOOR) ** 2


def bound_violation_rate(model: GpviModel, states, bound: UncertaintyBound,
                         draws: int = 10000, seed: int = 0,
                         return_skipped: bool = False):
    """Fraction of posterior draws violating the per-dimension bound.

    A draw violates if any velocity dimension deviates from the projected
    mean by at least sqrt(gamma) sigma_e(z).  Draws whose own projection
    does not converge count as violations (conservative); states where the
    *mean* prediction cannot be projected at all (the bound's Lipschitz
    assumption fails there, detectably) are skipped and reported via
    ``return_skipped``.
    """
    thresh = np.sqrt(bound.gamma)
    violations = 0
    total = 0
    skipped = 0
    for i, z in enumerate(states):
        rng = child_rng(seed, "bound-mc", i)
        try:
            ratios, _, bad = _projection_deviations(model, z, draws, rng)
        except SolverError:
            skipped += 1
            continue
        violations += bad + int(np.sum(np.max(ratios, axis=1) >= thresh))
        total += draws
    if total == 0:
        raise EstimationError("no states with projectable mean predictions")
    rate = violations / total
    if return_skipped:
        return rate, skipped
    return rate
