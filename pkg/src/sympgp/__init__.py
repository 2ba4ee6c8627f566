"""Structure-preserving learning of mechanical systems.

Combines first-order variational (symplectic) integrators with Gaussian
process regression of residual dynamics, for unconstrained and
kinematically constrained planar mechanisms.
"""

from .gp import (GpModel, KernelParams, TrainingSet, fit, gram_matrix,
                 kernel_eval, log_marginal_likelihood, posterior_mean,
                 posterior_variance)
from .gpvi import (GpviModel, UncertaintyBound, bound_violation_rate,
                   calibrate_beta, estimate_lipschitz, prediction_bound,
                   step_gp, step_gp_constrained, step_gp_unconstrained, train)
from .harness import (Dataset, EvaluationSummary, ExperimentConfig,
                      evaluate_multistep, generate_dataset,
                      run_bound_experiment, run_drift_experiment,
                      run_energy_experiment, run_prediction_sweep,
                      subsample_training)
from .integrators import (SolverConfig, StepResult, Trajectory, d0_residual,
                          discrete_velocity, discretely_consistent_velocity,
                          explicit_euler_step, rollout, step_nominal,
                          step_nominal_constrained, step_nominal_unconstrained,
                          symplectic_euler_step, write_trajectory_csv)
from .projection import project_velocity
from .systems import (ConstraintSet, MechSystem, State, SystemParams,
                      build_system, default_params, energy, perturb,
                      random_initial_state, to_reference_positions)

__version__ = "0.1.0"
