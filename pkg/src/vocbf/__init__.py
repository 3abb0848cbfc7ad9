"""Offline-learned control barrier functions with a QP safety filter.

Pipeline: generate (or load) logged transitions, fit the TD barrier and the
expectile-regressed CBF from them, fit a control-affine dynamics surrogate,
then wrap any reference controller with the exact box-QP filter and evaluate
closed loop.
"""

from .barrier import (BarrierFn, BarrierModelPair, BarrierTrainConfig, bd_target,
                      feature_encode, train_cbvf_model_based, train_td_barrier,
                      train_vocbf)
from .data import Transition, TransitionSet, load, sample_minibatch, save, split
from .dubins import (AgvConfig, AnalyticDynamics, analytic_fg, generate_dataset,
                     reward, safety_value, step)
from .dynamics import (DynamicsSurrogate, DynamicsTrainConfig, heldout_rmse,
                       train_dynamics)
from .evaluation import (ControlPipeline, EvalRow, ExperimentTable, RolloutResult,
                         ablate_noise, ablate_tau, compare_dynamics_modes,
                         eval_suite, rollout, safe_set_volume)
from .nn import (GradReport, MlpModel, MlpSpec, adam_step, expectile_loss,
                 input_grad, load_checkpoint, mlp_forward, mlp_init,
                 polyak_update, save_checkpoint, value_and_param_grad)
from .policy import BcTrainConfig, BehaviorCloned, GoToGoal, goto_goal, train_bc
from .qp import (QpProblem, QpSolution, QpStatus, lie_derivatives, qp_oracle,
                 qp_solve, safe_policy)

__version__ = "0.1.0"
