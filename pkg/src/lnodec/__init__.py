"""Learning exponentially stabilizing neural state-feedback control policies
for continuous-time optimal control problems.

The library rolls a bounded-output MLP policy through known control-affine
dynamics with fixed-step RK4, scores the rollout with a decay-condition
("stability") loss or with classic tracking objectives, differentiates the
loss either exactly through the solver or via the continuous costate
method, and trains with Adam.  Experiment helpers reproduce perturbation
sweeps, constraint-violation statistics, time-to-dose studies, and
domain-of-attraction grids on the two shipped benchmark problems.
"""

__version__ = "0.1.0"

from .dynamics import (DomainError, ProblemSpec, double_integrator,
                       eval_constraint, eval_drift, eval_F, eval_input_map,
                       get_problem, jac_F_x, plasma)
from .experiments import (DoaGrid, ExperimentReport, TrajectoryRecord,
                          adversarial_sweep, dose_sweep, empirical_lipschitz,
                          envelope_check, estimate_doa, robustness_bound,
                          sobol_points, time_to_dose, violation_rate)
from .gradients import (NonFiniteError, finite_difference_gradient,
                        loss_gradient_adjoint, loss_gradient_discrete,
                        training_loss)
from .losses import (MODE_LYAPUNOV, MODE_STAGE, MODE_TERMINAL, LossReport,
                     lyapunov_loss, nodec_stage_loss, nodec_terminal_loss,
                     pointwise_constrained, pointwise_lyapunov, potential,
                     potential_grad, stability_envelope)
from .policy import (PolicyArch, PolicyParams, default_arch, forward,
                     init_params, load_policy, save_policy, vjp)
from .simulate import (Trajectory, read_trajectory_csv, rk4_step, rollout,
                       truncate_at_target, write_trajectory_csv)
from .train import (AdamState, TrainConfig, adam_update, init_adam,
                    train_policy)

__all__ = [name for name in dir() if not name.startswith("_")]
